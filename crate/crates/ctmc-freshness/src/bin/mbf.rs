//! Command-line surface for the freshness library.
//!
//! Four subcommands cover the library end to end:
//!
//! - `mbf`: MBF rows (closed-form or empirical) over a sampling-rate sweep,
//!   one row per `(mu, estimator)` cell, as CSV;
//! - `smdp`: budget-constrained state-dependent sampling policy via policy
//!   iteration and Lagrangian bisection, emitting a summary plus a policy
//!   file that `simulate` can ingest;
//! - `multi`: budgeted rate allocation across several weighted sources, as
//!   CSV with uniform and weight-proportional benchmark columns;
//! - `simulate`: Monte Carlo run of a configured scenario, with optional
//!   closed-form cross-validation and an event trace.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
//! numerical failures. Floating-point output carries 17 significant digits
//! so downstream plots are bit-reproducible. Set `MBF_THREADS` to cap the
//! worker threads used for replications and sweeps.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctmc_freshness::config::{
    self, load_config, load_multi_config, policy_file_text, read_policy_file, RawEstimator,
};
use ctmc_freshness::{
    default_rate_grid, lagrangian_bisection, mbf_closed, mbf_report, preset_chain, simulate,
    simulate_traced, solve_constrained, ssp_metrics, Chain, Error, EstimatorSpec, MbfMethod,
    SamplingPolicy, SimConfig, SimResult, SourceSet, TraceEvent, PRESET_NAMES,
};

#[derive(Parser)]
#[command(
    name = "mbf",
    version,
    about = "Mean binary freshness of query-based remote CTMC estimation",
    after_help = "Exit codes: 0 success, 2 config/usage error, 3 numerical failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// MBF per (sampling rate, estimator) cell as CSV
    Mbf(MbfArgs),
    /// Optimal state-dependent sampling under an average-rate budget
    Smdp(SmdpArgs),
    /// Budgeted sampling-rate allocation across weighted sources
    Multi(MultiArgs),
    /// Monte Carlo simulation of a configured scenario
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct MbfArgs {
    /// Bundled preset name or path to a config file with a [chain] section
    chain: String,
    /// Comma-separated estimators: me, expe, erle, tmap, pmap
    #[arg(
        long,
        alias = "estimator",
        value_delimiter = ',',
        value_name = "KIND,..."
    )]
    estimators: Vec<String>,
    /// Sampling rate: a single value or an inclusive sweep start:stop:step
    #[arg(long, value_name = "MU | START:STOP:STEP")]
    mu: String,
    /// Clock rate for expe/erle estimators
    #[arg(long, alias = "lam")]
    lambda: Option<f64>,
    /// Stage count for the erle estimator
    #[arg(long)]
    gamma: Option<u32>,
    /// Switch threshold for the tmap estimator (omitted: MAP switch time)
    #[arg(long)]
    tau: Option<f64>,
    /// Keep only the first K MAP points of a derived pmap schedule
    #[arg(long, value_name = "K")]
    truncate: Option<usize>,
    /// Estimate each cell by simulation instead of closed forms
    #[arg(long)]
    empirical: bool,
    /// Simulated horizon per replication (with --empirical)
    #[arg(long, default_value_t = 1e4)]
    horizon: f64,
    /// Replications per cell (with --empirical)
    #[arg(long, default_value_t = 8)]
    replications: usize,
    /// Warmup time excluded from averages (with --empirical; default 1% of horizon)
    #[arg(long)]
    warmup: Option<f64>,
    /// Base RNG seed (with --empirical)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here instead of stdout
    #[arg(long, short, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SmdpArgs {
    /// Bundled preset name or path to a config file with a [chain] section
    chain: String,
    /// Average sampling-rate budget
    #[arg(long)]
    omega: f64,
    /// Estimator kind: me, tmap or pmap (default: the config's, else me)
    #[arg(long)]
    estimator: Option<String>,
    /// Switch threshold for the tmap estimator (omitted: MAP switch time)
    #[arg(long)]
    tau: Option<f64>,
    /// Keep only the first K MAP points of a derived pmap schedule
    #[arg(long, value_name = "K")]
    truncate: Option<usize>,
    /// Dual bisection stops when the multiplier bracket is narrower than this
    #[arg(long, default_value_t = 1e-5)]
    eps1: f64,
    /// Rate-gap tolerance below which the upper simple policy is returned
    #[arg(long, default_value_t = 1e-3)]
    eps2: f64,
    /// Size of the logarithmic action grid
    #[arg(long, default_value_t = 200)]
    grid_points: usize,
    /// Write the solved policy file here instead of printing it
    #[arg(long, value_name = "FILE")]
    policy_out: Option<PathBuf>,
}

#[derive(Args)]
struct MultiArgs {
    /// Path to a multi-source config listing [[source]] tables
    config: PathBuf,
    /// Total query-rate budget shared by all sources
    #[arg(long)]
    budget: f64,
    /// Per-source lower rate bound
    #[arg(long, default_value_t = 0.01)]
    rho_l: f64,
    /// Per-source upper rate bound (default: the budget)
    #[arg(long)]
    rho_u: Option<f64>,
    /// Dual bisection stops when the multiplier bracket is narrower than this
    #[arg(long, default_value_t = 1e-5)]
    eps1: f64,
    /// Budget-gap tolerance below which gradient refinement is skipped
    #[arg(long, default_value_t = 1e-3)]
    eps2: f64,
    /// Size of the per-source logarithmic rate grid
    #[arg(long, default_value_t = 200)]
    grid_points: usize,
    /// Write the CSV here instead of stdout
    #[arg(long, short, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Path to a config file with [chain], [estimator], [policy], [sim]
    config: PathBuf,
    /// Override the config's RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the config's [policy] with a solved policy file
    #[arg(long, value_name = "FILE")]
    policy_file: Option<PathBuf>,
    /// Also print closed-form values and z-scores of the empirical estimates
    #[arg(long)]
    validate: bool,
    /// Write the event trace of the first replication here as CSV
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
}

/// 17 significant digits: enough to reconstruct any f64 bit-exactly.
fn full(x: f64) -> String {
    format!("{x:.16e}")
}

/// Resolve a chain argument: a path to a config file (its `[chain]` section,
/// plus `[estimator]` as a fallback), or a bundled preset name.
fn resolve_chain(arg: &str) -> Result<(Chain, Option<RawEstimator>), Error> {
    let path = Path::new(arg);
    if path.is_file() {
        let raw = load_config(path)?;
        let section = raw.chain.ok_or_else(|| {
            Error::ParseError(format!("{} has no [chain] section", path.display()))
        })?;
        Ok((config::chain_from(&section)?, raw.estimator))
    } else if PRESET_NAMES.contains(&arg) {
        Ok((preset_chain(arg)?, None))
    } else {
        Err(Error::ParseError(format!(
            "'{arg}' is neither a readable config file nor a preset; presets are {}",
            PRESET_NAMES.join(", ")
        )))
    }
}

/// Estimator built from sweep flags, reusing the config-section defaults
/// (MAP-derived tau and pmap schedules).
fn estimator_from_flags(
    kind: &str,
    args: &MbfArgs,
    chain: &Chain,
) -> Result<EstimatorSpec, Error> {
    let raw = RawEstimator {
        kind: Some(kind.to_string()),
        lambda: args.lambda,
        gamma: args.gamma,
        tau: args.tau,
        thresholds: None,
        values: None,
        truncate: args.truncate,
    };
    config::estimator_from(&raw, chain)
}

fn spec_kind(spec: &EstimatorSpec) -> &'static str {
    match spec {
        EstimatorSpec::Martingale => "me",
        EstimatorSpec::Exponential { .. } => "expe",
        EstimatorSpec::Erlang { .. } => "erle",
        EstimatorSpec::TauMap { .. } => "tmap",
        EstimatorSpec::PMap { .. } => "pmap",
    }
}

/// Parse `--mu`: either one positive value or an inclusive `start:stop:step`
/// sweep.
fn parse_mu_values(arg: &str) -> Result<Vec<f64>, Error> {
    let bad = |msg: &str| Error::ParseError(format!("--mu '{arg}': {msg}"));
    let parts: Vec<&str> = arg.split(':').collect();
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|e| bad(&format!("'{s}' is not a number ({e})")))
    };
    let values = match parts.as_slice() {
        [one] => vec![parse(one)?],
        [start, stop, step] => {
            let (start, stop, step) = (parse(start)?, parse(stop)?, parse(step)?);
            if step <= 0.0 {
                return Err(bad("step must be positive"));
            }
            if stop < start {
                return Err(bad("stop must not be below start"));
            }
            let slack = 1e-9 * step.max(stop.abs()).max(1.0);
            let mut values = Vec::new();
            let mut k = 0u64;
            loop {
                let v = start + step * k as f64;
                if v > stop + slack {
                    break;
                }
                values.push(v);
                k += 1;
            }
            values
        }
        _ => return Err(bad("expected MU or START:STOP:STEP")),
    };
    if values.iter().any(|&v| v <= 0.0) {
        return Err(bad("sampling rates must be positive"));
    }
    Ok(values)
}

/// Sink for CSV output: a file when requested, stdout otherwise.
fn open_sink(output: &Option<PathBuf>) -> Result<Box<dyn std::io::Write>, Error> {
    match output {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| {
                Error::ParseError(format!("cannot create {}: {e}", path.display()))
            })?;
            Ok(Box::new(std::io::BufWriter::new(file)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn write_or_fail(sink: &mut dyn std::io::Write, line: &str) -> Result<(), Error> {
    writeln!(sink, "{line}").map_err(|e| Error::ParseError(format!("write failed: {e}")))
}

fn cmd_mbf(args: &MbfArgs) -> Result<(), Error> {
    let (chain, config_estimator) = resolve_chain(&args.chain)?;
    let specs: Vec<EstimatorSpec> = if args.estimators.is_empty() {
        match &config_estimator {
            Some(raw) => vec![config::estimator_from(raw, &chain)?],
            None => {
                return Err(Error::ParseError(
                    "no estimators given: pass --estimators or a config with [estimator]"
                        .to_string(),
                ))
            }
        }
    } else {
        args.estimators
            .iter()
            .map(|k| estimator_from_flags(k, args, &chain))
            .collect::<Result<_, _>>()?
    };
    let mus = parse_mu_values(&args.mu)?;

    let mut sink = open_sink(&args.output)?;
    write_or_fail(sink.as_mut(), "mu,estimator,mbf,method")?;
    if args.empirical {
        let warmup = args
            .warmup
            .unwrap_or_else(|| SimConfig::default_warmup(args.horizon));
        for &mu in &mus {
            for spec in &specs {
                let config = SimConfig {
                    chain: chain.clone(),
                    estimator: spec.clone(),
                    policy: SamplingPolicy::Fixed { mu },
                    horizon: args.horizon,
                    warmup,
                    seed: args.seed,
                    replications: args.replications,
                };
                let result = simulate(&config)?;
                write_or_fail(
                    sink.as_mut(),
                    &format!(
                        "{},{},{},{}",
                        full(mu),
                        spec_kind(spec),
                        full(result.empirical_mbf),
                        MbfMethod::Empirical
                    ),
                )?;
            }
        }
    } else {
        for &mu in &mus {
            for spec in &specs {
                let report = mbf_report(&chain, spec, mu)?;
                write_or_fail(
                    sink.as_mut(),
                    &format!(
                        "{},{},{},{}",
                        full(mu),
                        spec_kind(spec),
                        full(report.value),
                        report.method
                    ),
                )?;
            }
        }
    }
    sink.flush()
        .map_err(|e| Error::ParseError(format!("write failed: {e}")))
}

fn cmd_smdp(args: &SmdpArgs) -> Result<(), Error> {
    let (chain, config_estimator) = resolve_chain(&args.chain)?;
    let mut raw = config_estimator.unwrap_or_default();
    if let Some(kind) = &args.estimator {
        raw.kind = Some(kind.clone());
    }
    if raw.kind.is_none() {
        raw.kind = Some("me".to_string());
    }
    if args.tau.is_some() {
        raw.tau = args.tau;
    }
    if args.truncate.is_some() {
        raw.truncate = args.truncate;
    }
    let spec = config::estimator_from(&raw, &chain)?;
    let grid = default_rate_grid(args.omega, args.grid_points);
    let solution = solve_constrained(&chain, &spec, args.omega, &grid, args.eps1, args.eps2)?;

    let policy_type = match &solution.policy {
        SamplingPolicy::SemiSimple { .. } => "ssp",
        _ => "simple",
    };
    println!("chain = {}", chain.label());
    println!("estimator = {}", spec_kind(&spec));
    println!("Omega = {}", full(args.omega));
    println!("gamma = {}", full(solution.gamma));
    println!("omega = {}", full(solution.omega));
    println!("mbf = {}", full(solution.mbf));
    println!("type = {policy_type}");
    let rates = solution.policy.effective_rates(chain.size())?;
    println!(
        "mean_rates = [{}]",
        rates.iter().map(|&r| full(r)).collect::<Vec<_>>().join(", ")
    );

    let text = policy_file_text(&solution, args.omega)?;
    match &args.policy_out {
        Some(path) => {
            std::fs::write(path, &text).map_err(|e| {
                Error::ParseError(format!("cannot write {}: {e}", path.display()))
            })?;
            println!("policy_file = {}", path.display());
        }
        None => {
            println!();
            print!("{text}");
        }
    }
    Ok(())
}

fn cmd_multi(args: &MultiArgs) -> Result<(), Error> {
    let sources = load_multi_config(&args.config)?;
    let count = sources.len();
    let rho_u = args.rho_u.unwrap_or(args.budget);
    let set = SourceSet::new(sources, args.budget, args.rho_l, rho_u)?;
    let allocation = lagrangian_bisection(&set, args.eps1, args.eps2, args.grid_points)?;

    let uniform: Vec<f64> = vec![args.budget / count as f64; count];
    let weighted: Vec<f64> = set.sources.iter().map(|s| s.weight * args.budget).collect();
    let uniform_objective = set.objective(&uniform)?;
    let weighted_objective = set.objective(&weighted)?;

    let mut sink = open_sink(&args.output)?;
    write_or_fail(sink.as_mut(), &format!("# budget = {}", full(args.budget)))?;
    write_or_fail(
        sink.as_mut(),
        &format!("# objective = {}", full(allocation.objective)),
    )?;
    write_or_fail(sink.as_mut(), &format!("# spent = {}", full(allocation.total)))?;
    write_or_fail(sink.as_mut(), &format!("# theta = {}", full(allocation.theta)))?;
    write_or_fail(
        sink.as_mut(),
        &format!("# used_gradient_refinement = {}", allocation.used_pgd),
    )?;
    write_or_fail(
        sink.as_mut(),
        &format!("# uniform_objective = {}", full(uniform_objective)),
    )?;
    write_or_fail(
        sink.as_mut(),
        &format!("# weighted_objective = {}", full(weighted_objective)),
    )?;
    write_or_fail(
        sink.as_mut(),
        "source,label,weight,rate,mbf,uniform_rate,uniform_mbf,weighted_rate,weighted_mbf",
    )?;
    for (i, source) in set.sources.iter().enumerate() {
        let rate = allocation.rates[i];
        write_or_fail(
            sink.as_mut(),
            &format!(
                "{},{},{},{},{},{},{},{},{}",
                i,
                source.chain.label(),
                full(source.weight),
                full(rate),
                full(source.mbf(rate)?),
                full(uniform[i]),
                full(source.mbf(uniform[i])?),
                full(weighted[i]),
                full(source.mbf(weighted[i])?),
            ),
        )?;
    }
    sink.flush()
        .map_err(|e| Error::ParseError(format!("write failed: {e}")))
}

fn policy_summary(policy: &SamplingPolicy) -> String {
    match policy {
        SamplingPolicy::Fixed { mu } => format!("fixed mu = {}", full(*mu)),
        SamplingPolicy::PerState { mu } => format!(
            "perstate rates = [{}]",
            mu.iter().map(|&r| full(r)).collect::<Vec<_>>().join(", ")
        ),
        SamplingPolicy::SemiSimple {
            mu,
            r,
            mu_r1,
            mu_r2,
            p,
        } => format!(
            "semisimple r = {r}, mu_r1 = {}, mu_r2 = {}, p = {}, rates = [{}]",
            full(*mu_r1),
            full(*mu_r2),
            full(*p),
            mu.iter().map(|&x| full(x)).collect::<Vec<_>>().join(", ")
        ),
    }
}

/// Analytic MBF and average query rate of a configured scenario. Fixed-rate
/// policies use the estimator closed forms directly; state-dependent
/// policies go through the joint stationary analysis (semi-simple policies
/// get the mean-rate approximation).
fn analytic_values(config: &SimConfig) -> Result<(f64, f64), Error> {
    match &config.policy {
        SamplingPolicy::Fixed { mu } => {
            Ok((mbf_closed(&config.chain, &config.estimator, *mu)?, *mu))
        }
        _ => ssp_metrics(&config.chain, &config.estimator, &config.policy),
    }
}

fn write_trace(path: &Path, events: &[TraceEvent]) -> Result<(), Error> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::ParseError(format!("cannot create {}: {e}", path.display())))?;
    let mut sink = std::io::BufWriter::new(file);
    write_or_fail(&mut sink, "time,type,x,xhat,rate")?;
    for event in events {
        write_or_fail(
            &mut sink,
            &format!(
                "{},{},{},{},{}",
                full(event.time),
                event.kind,
                event.state,
                event.estimate,
                full(event.rate)
            ),
        )?;
    }
    sink.flush()
        .map_err(|e| Error::ParseError(format!("write failed: {e}")))
}

fn print_sim_summary(config: &SimConfig, result: &SimResult) {
    println!("chain = {}", config.chain.label());
    println!("estimator = {}", spec_kind(&config.estimator));
    println!("policy = {}", policy_summary(&config.policy));
    println!("horizon = {}", full(config.horizon));
    println!("warmup = {}", full(config.warmup));
    println!("seed = {}", config.seed);
    println!("replications = {}", config.replications);
    println!("mbf = {}", full(result.empirical_mbf));
    println!("std_error = {}", full(result.std_error));
    println!("omega = {}", full(result.empirical_omega));
    println!("queries = {}", result.query_count);
    println!("fresh_time = {}", full(result.fresh_time));
    println!("total_time = {}", full(result.total_time));
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let raw = load_config(&args.config)?;
    let mut config = config::sim_config_from(&raw, args.seed)?;
    if let Some(path) = &args.policy_file {
        config.policy = read_policy_file(path, config.chain.size())?;
        config.validate()?;
    }

    let result = match &args.trace {
        Some(path) => {
            let (result, events) = simulate_traced(&config)?;
            write_trace(path, &events)?;
            result
        }
        None => simulate(&config)?,
    };
    print_sim_summary(&config, &result);

    if args.validate {
        let (analytic_mbf, analytic_omega) = analytic_values(&config)?;
        let mbf_z = if result.std_error > 0.0 {
            (result.empirical_mbf - analytic_mbf) / result.std_error
        } else {
            0.0
        };
        // Poisson approximation: SE(omega-hat) = sqrt(queries) / time.
        let omega_se = (result.query_count as f64).sqrt() / result.total_time;
        let omega_z = if omega_se > 0.0 {
            (result.empirical_omega - analytic_omega) / omega_se
        } else {
            0.0
        };
        println!("analytic_mbf = {}", full(analytic_mbf));
        println!("mbf_z = {}", full(mbf_z));
        println!("analytic_omega = {}", full(analytic_omega));
        println!("omega_se = {}", full(omega_se));
        println!("omega_z = {}", full(omega_z));
    }
    if let Some(path) = &args.trace {
        println!("trace_file = {}", path.display());
    }
    Ok(())
}

/// 2 for configuration problems the user can fix by editing inputs, 3 for
/// numerical breakdowns inside the solvers.
fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::ParseError(_)
        | Error::RowSumViolation(_)
        | Error::NegativeOffDiagonal(_)
        | Error::NotIrreducible(_)
        | Error::NegativeTime(_)
        | Error::InvalidThresholds(_)
        | Error::RandomizedEstimatorUnsupported(_)
        | Error::NonpositiveRate(_)
        | Error::InfeasibleBounds(_)
        | Error::NoUniqueMaximum(_) => 2,
        Error::NotReversible(_)
        | Error::SingularResolvent(_)
        | Error::MissingAuxStage(_)
        | Error::SingularSystem(_)
        | Error::SingularSolve(_)
        | Error::MaxIterationsExceeded(_)
        | Error::BracketingFailure(_) => 3,
    }
}

fn configure_threads() -> Result<(), Error> {
    if let Ok(raw) = std::env::var("MBF_THREADS") {
        let threads: usize = raw.parse().map_err(|e| {
            Error::ParseError(format!("MBF_THREADS = '{raw}' is not a thread count ({e})"))
        })?;
        if threads == 0 {
            return Err(Error::ParseError(
                "MBF_THREADS must be at least 1".to_string(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::ParseError(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    configure_threads()?;
    match &cli.command {
        Command::Mbf(args) => cmd_mbf(args),
        Command::Smdp(args) => cmd_smdp(args),
        Command::Multi(args) => cmd_multi(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code_for(&error))
        }
    }
}
