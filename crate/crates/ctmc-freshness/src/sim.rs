//! Event-driven Monte Carlo reference for every closed form in the crate.
//!
//! One replication simulates three competing event streams with exact
//! exponential interarrival times and no time discretization:
//!
//! - source jumps of the chain `X(t)` at the current exit rate;
//! - query arrivals, after which the estimator restarts from the sampled
//!   state; the inter-query rate may depend on that state and, for a
//!   semi-simple policy, is redrawn between two candidates each time the
//!   randomized state is sampled;
//! - estimator stage transitions: deterministic age thresholds for the
//!   MAP-style estimators, one exponential clock for the exponential
//!   estimator, and the auxiliary counting chain `Y(t)` (forward rate
//!   `lambda Gamma`, reset on query) for the Erlang estimator.
//!
//! Fresh time accumulates as exact interval lengths on which
//! `X(t) = Xhat(t)` past the warmup cutoff, so `empirical_mbf` is the exact
//! time average of the indicator over the retained window. Replications
//! draw independent generators from a split of the base seed and run in
//! parallel; aggregation is order-deterministic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain::Chain;
use crate::error::{Error, Result};
use crate::estimators::EstimatorSpec;
use crate::statedep::SamplingPolicy;

/// Monte Carlo run description.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub chain: Chain,
    pub estimator: EstimatorSpec,
    pub policy: SamplingPolicy,
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
    pub replications: usize,
}

impl SimConfig {
    /// Default discarded prefix: 1% of the horizon.
    pub fn default_warmup(horizon: f64) -> f64 {
        0.01 * horizon
    }

    pub fn validate(&self) -> Result<()> {
        self.estimator.validate(self.chain.size())?;
        self.policy.validate(self.chain.size())?;
        if !(self.warmup >= 0.0 && self.horizon > self.warmup) {
            return Err(Error::NegativeTime(format!(
                "need horizon > warmup >= 0, got horizon = {}, warmup = {}",
                self.horizon, self.warmup
            )));
        }
        if self.replications == 0 {
            return Err(Error::ParseError("replications must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Aggregated Monte Carlo outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Mean over replications of each replication's fresh-time fraction.
    pub empirical_mbf: f64,
    /// Standard error of that mean (0 for a single replication).
    pub std_error: f64,
    /// Total fresh time across replications, past warmup.
    pub fresh_time: f64,
    /// Total retained time across replications.
    pub total_time: f64,
    /// Queries fired past warmup, across replications.
    pub query_count: u64,
    /// `query_count / total_time`.
    pub empirical_omega: f64,
    /// Per-replication fresh-time fractions, in replication order.
    pub per_replication: Vec<f64>,
}

/// What happened at a trace record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEventKind {
    /// Initial condition at time zero.
    Init,
    /// The source chain jumped.
    SourceJump,
    /// A query sampled the source.
    Query,
    /// The estimator advanced a stage.
    Stage,
    /// Horizon reached.
    End,
}

impl std::fmt::Display for TraceEventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TraceEventKind::Init => "init",
            TraceEventKind::SourceJump => "jump",
            TraceEventKind::Query => "query",
            TraceEventKind::Stage => "stage",
            TraceEventKind::End => "end",
        };
        write!(f, "{s}")
    }
}

/// One event record: the state shown is the state in force immediately
/// after the event, so consecutive records delimit constant intervals and
/// the fresh-time accounting can be replayed exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: TraceEventKind,
    pub state: usize,
    pub estimate: usize,
    pub rate: f64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn exp_draw(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    -(1.0 - rng.random::<f64>()).ln() / rate
}

fn draw_categorical(rng: &mut ChaCha8Rng, cum: &[f64]) -> usize {
    let u = rng.random::<f64>();
    let mut k = 0;
    while k + 1 < cum.len() && cum[k] < u {
        k += 1;
    }
    k
}

enum StageKind {
    /// Per-state interior thresholds and the stage values between them.
    Deterministic {
        thresholds: Vec<Vec<f64>>,
        values: Vec<Vec<usize>>,
    },
    Exponential { lambda: f64 },
    /// Auxiliary counter from 1 to `gamma` at rate `lambda * gamma`.
    Erlang { gamma: u32, rate: f64 },
}

struct Prepared {
    cum_pi: Vec<f64>,
    /// Per state: cumulative jump law and matching destinations.
    jump_cum: Vec<Vec<f64>>,
    jump_dest: Vec<Vec<usize>>,
    stage: StageKind,
    i_star: usize,
}

fn prepare(chain: &Chain, spec: &EstimatorSpec) -> Result<Prepared> {
    let s = chain.size();
    let (i_star, _) = chain.stationary_maximizer();
    let mut cum_pi = Vec::with_capacity(s);
    let mut acc = 0.0;
    for i in 0..s {
        acc += chain.pi()[i];
        cum_pi.push(acc);
    }
    let mut jump_cum = Vec::with_capacity(s);
    let mut jump_dest = Vec::with_capacity(s);
    for i in 0..s {
        let dests: Vec<usize> = (0..s).filter(|&j| j != i && chain.rate(i, j) > 0.0).collect();
        let total: f64 = dests.iter().map(|&j| chain.rate(i, j)).sum();
        let mut cum = Vec::with_capacity(dests.len());
        let mut a = 0.0;
        for &j in &dests {
            a += chain.rate(i, j) / total;
            cum.push(a);
        }
        jump_cum.push(cum);
        jump_dest.push(dests);
    }
    let stage = match spec {
        EstimatorSpec::Exponential { lambda } => StageKind::Exponential { lambda: *lambda },
        EstimatorSpec::Erlang { gamma, lambda } => StageKind::Erlang {
            gamma: *gamma,
            rate: lambda * f64::from(*gamma),
        },
        _ => {
            let mut thresholds = Vec::with_capacity(s);
            let mut values = Vec::with_capacity(s);
            for i in 0..s {
                let (ths, vals) = spec.trajectory(i, i_star)?;
                thresholds.push(ths);
                values.push(vals);
            }
            StageKind::Deterministic { thresholds, values }
        }
    };
    Ok(Prepared {
        cum_pi,
        jump_cum,
        jump_dest,
        stage,
        i_star,
    })
}

fn policy_rate(policy: &SamplingPolicy, last: usize, rng: &mut ChaCha8Rng) -> f64 {
    match policy {
        SamplingPolicy::Fixed { mu } => *mu,
        SamplingPolicy::PerState { mu } => mu[last],
        SamplingPolicy::SemiSimple {
            mu,
            r,
            mu_r1,
            mu_r2,
            p,
        } => {
            if last == *r {
                if rng.random::<f64>() < *p {
                    *mu_r1
                } else {
                    *mu_r2
                }
            } else {
                mu[last]
            }
        }
    }
}

struct RepOutcome {
    fresh: f64,
    total: f64,
    queries: u64,
    /// Time spent in each source state past warmup.
    occupancy: Vec<f64>,
}

#[allow(clippy::too_many_lines)]
fn run_one(
    config: &SimConfig,
    prep: &Prepared,
    seed: u64,
    mut trace: Option<&mut Vec<TraceEvent>>,
) -> RepOutcome {
    let chain = &config.chain;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = config.horizon;
    let warmup = config.warmup;

    let mut x = draw_categorical(&mut rng, &prep.cum_pi);
    let mut last = draw_categorical(&mut rng, &prep.cum_pi);
    let mut sample_time = 0.0_f64;
    // Deterministic stage index, or for randomized clocks the switch flag
    // (Exponential) / auxiliary counter progress (Erlang).
    let mut stage: usize = 0;
    let mut y: u32 = 1;
    let mut rate = policy_rate(&config.policy, last, &mut rng);
    let mut next_jump = exp_draw(&mut rng, chain.exit_rate(x));
    let mut next_query = exp_draw(&mut rng, rate);
    let mut next_stage = match &prep.stage {
        StageKind::Deterministic { thresholds, .. } => {
            if thresholds[last].is_empty() {
                f64::INFINITY
            } else {
                sample_time + thresholds[last][0]
            }
        }
        StageKind::Exponential { lambda } => exp_draw(&mut rng, *lambda),
        StageKind::Erlang { gamma, rate } => {
            if *gamma <= 1 {
                f64::INFINITY
            } else {
                exp_draw(&mut rng, *rate)
            }
        }
    };

    let estimate = |last: usize, stage: usize| -> usize {
        match &prep.stage {
            StageKind::Deterministic { values, .. } => values[last][stage],
            _ => {
                if stage > 0 {
                    prep.i_star
                } else {
                    last
                }
            }
        }
    };

    let mut fresh = 0.0_f64;
    let mut total = 0.0_f64;
    let mut queries: u64 = 0;
    let mut occupancy = vec![0.0_f64; chain.size()];
    let mut t = 0.0_f64;
    if let Some(tr) = trace.as_deref_mut() {
        tr.push(TraceEvent {
            time: 0.0,
            kind: TraceEventKind::Init,
            state: x,
            estimate: estimate(last, stage),
            rate,
        });
    }

    while t < horizon {
        let tn = next_jump.min(next_query).min(next_stage).min(horizon);
        let cutoff = t.max(warmup);
        if tn > cutoff {
            let span = tn - cutoff;
            total += span;
            if x == estimate(last, stage) {
                fresh += span;
            }
            occupancy[x] += span;
        }
        t = tn;
        if t >= horizon {
            break;
        }
        if next_jump <= next_query && next_jump <= next_stage {
            let k = draw_categorical(&mut rng, &prep.jump_cum[x]);
            x = prep.jump_dest[x][k];
            next_jump = t + exp_draw(&mut rng, chain.exit_rate(x));
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(TraceEvent {
                    time: t,
                    kind: TraceEventKind::SourceJump,
                    state: x,
                    estimate: estimate(last, stage),
                    rate,
                });
            }
        } else if next_query <= next_stage {
            last = x;
            sample_time = t;
            stage = 0;
            y = 1;
            if t >= warmup {
                queries += 1;
            }
            rate = policy_rate(&config.policy, last, &mut rng);
            next_query = t + exp_draw(&mut rng, rate);
            next_stage = match &prep.stage {
                StageKind::Deterministic { thresholds, .. } => {
                    if thresholds[last].is_empty() {
                        f64::INFINITY
                    } else {
                        sample_time + thresholds[last][0]
                    }
                }
                StageKind::Exponential { lambda } => t + exp_draw(&mut rng, *lambda),
                StageKind::Erlang { gamma, rate } => {
                    if *gamma <= 1 {
                        f64::INFINITY
                    } else {
                        t + exp_draw(&mut rng, *rate)
                    }
                }
            };
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(TraceEvent {
                    time: t,
                    kind: TraceEventKind::Query,
                    state: x,
                    estimate: estimate(last, stage),
                    rate,
                });
            }
        } else {
            match &prep.stage {
                StageKind::Deterministic { thresholds, .. } => {
                    stage += 1;
                    next_stage = if stage < thresholds[last].len() {
                        sample_time + thresholds[last][stage]
                    } else {
                        f64::INFINITY
                    };
                }
                StageKind::Exponential { .. } => {
                    stage = 1;
                    next_stage = f64::INFINITY;
                }
                StageKind::Erlang { gamma, rate } => {
                    y += 1;
                    if y >= *gamma {
                        stage = 1;
                        next_stage = f64::INFINITY;
                    } else {
                        next_stage = t + exp_draw(&mut rng, *rate);
                    }
                }
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(TraceEvent {
                    time: t,
                    kind: TraceEventKind::Stage,
                    state: x,
                    estimate: estimate(last, stage),
                    rate,
                });
            }
        }
    }
    if let Some(tr) = trace.as_deref_mut() {
        tr.push(TraceEvent {
            time: horizon,
            kind: TraceEventKind::End,
            state: x,
            estimate: estimate(last, stage),
            rate,
        });
    }
    RepOutcome {
        fresh,
        total,
        queries,
        occupancy,
    }
}

fn aggregate(config: &SimConfig, outcomes: Vec<RepOutcome>) -> SimResult {
    let per_replication: Vec<f64> = outcomes.iter().map(|o| o.fresh / o.total).collect();
    let n = per_replication.len() as f64;
    let mean = per_replication.iter().sum::<f64>() / n;
    let std_error = if per_replication.len() >= 2 {
        let var = per_replication
            .iter()
            .map(|m| (m - mean) * (m - mean))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let fresh_time: f64 = outcomes.iter().map(|o| o.fresh).sum();
    let total_time: f64 = outcomes.iter().map(|o| o.total).sum();
    let query_count: u64 = outcomes.iter().map(|o| o.queries).sum();
    let _ = config;
    SimResult {
        empirical_mbf: mean,
        std_error,
        fresh_time,
        total_time,
        query_count,
        empirical_omega: query_count as f64 / total_time,
        per_replication,
    }
}

fn rep_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut state = seed;
    (0..n).map(|_| splitmix64(&mut state)).collect()
}

/// Run all replications (in parallel) and aggregate.
pub fn simulate(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let prep = prepare(&config.chain, &config.estimator)?;
    let seeds = rep_seeds(config.seed, config.replications);
    let outcomes: Vec<RepOutcome> = seeds
        .par_iter()
        .map(|&s| run_one(config, &prep, s, None))
        .collect();
    Ok(aggregate(config, outcomes))
}

/// As [`simulate`], additionally returning the event trace of the first
/// replication. Replaying the trace intervals reproduces that
/// replication's fresh and total times exactly.
pub fn simulate_traced(config: &SimConfig) -> Result<(SimResult, Vec<TraceEvent>)> {
    config.validate()?;
    let prep = prepare(&config.chain, &config.estimator)?;
    let seeds = rep_seeds(config.seed, config.replications);
    let mut trace = Vec::new();
    let mut outcomes = vec![run_one(config, &prep, seeds[0], Some(&mut trace))];
    let rest: Vec<RepOutcome> = seeds[1..]
        .par_iter()
        .map(|&s| run_one(config, &prep, s, None))
        .collect();
    outcomes.extend(rest);
    Ok((aggregate(config, outcomes), trace))
}

/// Empirical state occupancy fractions past warmup, averaged over
/// replications, for distributional sanity checks against `pi`.
pub fn occupancy(config: &SimConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let prep = prepare(&config.chain, &config.estimator)?;
    let seeds = rep_seeds(config.seed, config.replications);
    let outcomes: Vec<RepOutcome> = seeds
        .par_iter()
        .map(|&s| run_one(config, &prep, s, None))
        .collect();
    let s = config.chain.size();
    let mut occ = vec![0.0; s];
    let mut total = 0.0;
    for o in &outcomes {
        for i in 0..s {
            occ[i] += o.occupancy[i];
        }
        total += o.total;
    }
    Ok(occ.into_iter().map(|v| v / total).collect())
}

/// Batch wrapper over [`simulate`]: one result per config, input order.
pub fn empirical_sweep(configs: &[SimConfig]) -> Result<Vec<SimResult>> {
    configs.iter().map(simulate).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_chain;
    use nalgebra::DMatrix;

    fn binary() -> Chain {
        build_chain(
            DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
            "binary",
        )
        .unwrap()
    }

    fn base_config(horizon: f64, reps: usize) -> SimConfig {
        SimConfig {
            chain: binary(),
            estimator: EstimatorSpec::Martingale,
            policy: SamplingPolicy::Fixed { mu: 1.0 },
            horizon,
            warmup: SimConfig::default_warmup(horizon),
            seed: 7,
            replications: reps,
        }
    }

    #[test]
    fn binary_martingale_hits_two_thirds() {
        let r = simulate(&base_config(40000.0, 16)).unwrap();
        assert!(r.std_error > 0.0, "replications must produce a spread");
        assert!(
            (r.empirical_mbf - 2.0 / 3.0).abs() < 3.0 * r.std_error,
            "binary martingale MBF {} +/- {} should cover 2/3",
            r.empirical_mbf,
            r.std_error
        );
    }

    #[test]
    fn identical_configs_are_bitwise_identical() {
        let a = simulate(&base_config(5000.0, 3)).unwrap();
        let b = simulate(&base_config(5000.0, 3)).unwrap();
        assert_eq!(a, b, "same seed and config must reproduce exactly");
    }

    #[test]
    fn fast_sampling_is_always_fresh() {
        let mut c = base_config(50.0, 1);
        c.policy = SamplingPolicy::Fixed { mu: 1e4 };
        let r = simulate(&c).unwrap();
        assert!(
            r.empirical_mbf > 0.99,
            "near-instant queries should track the source, got {}",
            r.empirical_mbf
        );
    }

    #[test]
    fn empirical_omega_matches_policy_rate() {
        let r = simulate(&base_config(40000.0, 2)).unwrap();
        // Poisson count spread over the retained window.
        let se = (r.query_count as f64).sqrt() / r.total_time;
        assert!(
            (r.empirical_omega - 1.0).abs() < 4.0 * se,
            "empirical query rate {} strays from mu = 1",
            r.empirical_omega
        );
    }

    #[test]
    fn trace_replays_fresh_time_exactly() {
        let mut c = base_config(2000.0, 1);
        c.estimator = EstimatorSpec::TauMap { tau: 0.8 };
        let (r, trace) = simulate_traced(&c).unwrap();
        let mut fresh = 0.0;
        let mut total = 0.0;
        for w in trace.windows(2) {
            let cutoff = w[0].time.max(c.warmup);
            if w[1].time > cutoff {
                let span = w[1].time - cutoff;
                total += span;
                if w[0].state == w[0].estimate {
                    fresh += span;
                }
            }
        }
        assert_eq!(
            fresh, r.fresh_time,
            "trace replay must reproduce fresh time bit for bit"
        );
        assert_eq!(
            total, r.total_time,
            "trace replay must reproduce total time bit for bit"
        );
    }

    #[test]
    fn occupancy_matches_stationary_law() {
        let occ = occupancy(&base_config(40000.0, 2)).unwrap();
        for (i, &o) in occ.iter().enumerate() {
            assert!(
                (o - 0.5).abs() < 0.02,
                "occupancy of state {i} = {o} should be near 1/2"
            );
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = base_config(10.0, 1);
        c.warmup = 10.0;
        assert!(matches!(simulate(&c), Err(Error::NegativeTime(_))));
        let mut c2 = base_config(10.0, 1);
        c2.replications = 0;
        assert!(matches!(simulate(&c2), Err(Error::ParseError(_))));
    }
}
