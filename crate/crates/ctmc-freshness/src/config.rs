//! Human-editable run configuration and solver output files.
//!
//! Configs are TOML with up to four sections:
//!
//! ```toml
//! [chain]                      # one of: preset, or explicit rates
//! preset = "fig9"              # bundled chain name
//! # size = 4                   # with `rates`: row-major S*S generator;
//! # rates = [ ... ]            #   all-zero diagonals are derived as
//! # label = "custom"           #   negative off-diagonal row sums
//!
//! [estimator]
//! kind = "tmap"                # me | expe | erle | tmap | pmap
//! # lambda = 1.2               # expe, erle
//! # gamma = 10                 # erle
//! # tau = 0.9                  # tmap; omitted -> MAP switch time
//! # thresholds = [[0.4], ...]  # pmap: interior thresholds per state
//! # values = [[0, 3], ...]     # pmap: stage values per state
//! # truncate = 4               # pmap without thresholds: keep first K
//!                              #   MAP points (omitted -> all)
//!
//! [policy]
//! kind = "fixed"               # fixed | perstate | semisimple
//! mu = 0.5                     # fixed
//! # rates = [0.4, 0.6, ...]    # perstate, semisimple
//! # r = 1                      # semisimple randomized state
//! # mu_r1 = 1.4                # semisimple, probability p
//! # mu_r2 = 0.2                # semisimple, probability 1-p
//! # p = 0.3
//!
//! [sim]
//! horizon = 1e6
//! # warmup = 1e4               # omitted -> 1% of horizon
//! seed = 42
//! replications = 8
//! ```
//!
//! Solved sampling policies are written back in the same `[policy]` shape
//! plus a `[solution]` metadata block, so a solver output file can be fed
//! straight back as the policy section of a simulation run.
//!
//! Multi-source allocation problems use a separate document listing one
//! `[[source]]` table per monitored chain:
//!
//! ```toml
//! [[source]]
//! weight = 0.4                 # importance weights must sum to 1
//!   [source.chain]
//!   preset = "fig6a"
//!   [source.estimator]         # omitted -> martingale estimator
//!   kind = "pmap"
//!
//! [[source]]
//! weight = 0.6
//!   [source.chain]
//!   preset = "fig9"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::{build_chain, Chain};
use crate::error::{Error, Result};
use crate::estimators::{pmap_from_map_truncated, EstimatorSpec, PMapSchedule};
use crate::multisource::Source;
use crate::presets::{default_map_structure, preset_chain};
use crate::sim::SimConfig;
use crate::smdp::PolicySolution;
use crate::statedep::SamplingPolicy;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub chain: Option<RawChain>,
    pub estimator: Option<RawEstimator>,
    pub policy: Option<RawPolicy>,
    pub sim: Option<RawSim>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawChain {
    pub preset: Option<String>,
    pub size: Option<usize>,
    pub rates: Option<Vec<f64>>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEstimator {
    pub kind: Option<String>,
    pub lambda: Option<f64>,
    pub gamma: Option<u32>,
    pub tau: Option<f64>,
    pub thresholds: Option<Vec<Vec<f64>>>,
    pub values: Option<Vec<Vec<usize>>>,
    pub truncate: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPolicy {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_r1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_r2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSim {
    pub horizon: Option<f64>,
    pub warmup: Option<f64>,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
}

/// Parse a config document, surfacing TOML diagnostics verbatim.
pub fn parse_config(text: &str) -> Result<RawConfig> {
    toml::from_str(text).map_err(|e| Error::ParseError(format!("config: {e}")))
}

/// Read and parse a config file.
pub fn load_config(path: &Path) -> Result<RawConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ParseError(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Build the chain described by the `[chain]` section.
pub fn chain_from(raw: &RawChain) -> Result<Chain> {
    match (&raw.preset, &raw.rates) {
        (Some(_), Some(_)) => Err(Error::ParseError(
            "[chain] takes either `preset` or `rates`, not both".to_string(),
        )),
        (Some(name), None) => preset_chain(name),
        (None, Some(rates)) => {
            let size = match raw.size {
                Some(s) => s,
                None => {
                    let s = (rates.len() as f64).sqrt().round() as usize;
                    if s * s != rates.len() {
                        return Err(Error::ParseError(format!(
                            "[chain] rates has {} entries, not a square count",
                            rates.len()
                        )));
                    }
                    s
                }
            };
            if size * size != rates.len() {
                return Err(Error::ParseError(format!(
                    "[chain] expected {} rates for size {size}, got {}",
                    size * size,
                    rates.len()
                )));
            }
            let mut q = nalgebra::DMatrix::from_row_slice(size, size, rates);
            if (0..size).all(|i| q[(i, i)] == 0.0) {
                for i in 0..size {
                    let row_sum: f64 = (0..size).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
                    q[(i, i)] = -row_sum;
                }
            }
            build_chain(q, raw.label.as_deref().unwrap_or("custom"))
        }
        (None, None) => Err(Error::ParseError(
            "[chain] needs `preset` or `rates`".to_string(),
        )),
    }
}

/// Resolve the `[estimator]` section against a chain. MAP-derived defaults
/// (missing `tau` for tmap, missing thresholds for pmap) scan the chain's
/// default MAP window.
pub fn estimator_from(raw: &RawEstimator, chain: &Chain) -> Result<EstimatorSpec> {
    let kind = raw
        .kind
        .as_deref()
        .ok_or_else(|| Error::ParseError("[estimator] needs `kind`".to_string()))?;
    let need_lambda = || {
        raw.lambda
            .ok_or_else(|| Error::ParseError(format!("[estimator] kind {kind} needs `lambda`")))
    };
    let spec = match kind {
        "me" => EstimatorSpec::Martingale,
        "expe" => EstimatorSpec::Exponential {
            lambda: need_lambda()?,
        },
        "erle" => EstimatorSpec::Erlang {
            gamma: raw.gamma.ok_or_else(|| {
                Error::ParseError("[estimator] kind erle needs `gamma`".to_string())
            })?,
            lambda: need_lambda()?,
        },
        "tmap" => {
            let tau = match raw.tau {
                Some(t) => t,
                None => default_map_structure(chain)?.tau_star,
            };
            EstimatorSpec::TauMap { tau }
        }
        "pmap" => {
            let schedule = match (&raw.thresholds, &raw.values) {
                (Some(ths), Some(vals)) => {
                    PMapSchedule::from_interior(ths, vals.clone())
                }
                (None, None) => {
                    let map = default_map_structure(chain)?;
                    pmap_from_map_truncated(chain, &map, raw.truncate.unwrap_or(usize::MAX))?
                }
                _ => {
                    return Err(Error::ParseError(
                        "[estimator] pmap needs both `thresholds` and `values`, or neither"
                            .to_string(),
                    ))
                }
            };
            EstimatorSpec::PMap { schedule }
        }
        other => {
            return Err(Error::ParseError(format!(
                "[estimator] unknown kind '{other}'; expected me, expe, erle, tmap or pmap"
            )))
        }
    };
    spec.validate(chain.size())?;
    Ok(spec)
}

/// Resolve the `[policy]` section.
pub fn policy_from(raw: &RawPolicy, size: usize) -> Result<SamplingPolicy> {
    let need_rates = || {
        raw.rates
            .clone()
            .ok_or_else(|| Error::ParseError(format!("[policy] kind {} needs `rates`", raw.kind)))
    };
    let policy = match raw.kind.as_str() {
        "fixed" => SamplingPolicy::Fixed {
            mu: raw
                .mu
                .ok_or_else(|| Error::ParseError("[policy] kind fixed needs `mu`".to_string()))?,
        },
        "perstate" => SamplingPolicy::PerState { mu: need_rates()? },
        "semisimple" => SamplingPolicy::SemiSimple {
            mu: need_rates()?,
            r: raw.r.ok_or_else(|| {
                Error::ParseError("[policy] kind semisimple needs `r`".to_string())
            })?,
            mu_r1: raw.mu_r1.ok_or_else(|| {
                Error::ParseError("[policy] kind semisimple needs `mu_r1`".to_string())
            })?,
            mu_r2: raw.mu_r2.ok_or_else(|| {
                Error::ParseError("[policy] kind semisimple needs `mu_r2`".to_string())
            })?,
            p: raw.p.ok_or_else(|| {
                Error::ParseError("[policy] kind semisimple needs `p`".to_string())
            })?,
        },
        other => {
            return Err(Error::ParseError(format!(
                "[policy] unknown kind '{other}'; expected fixed, perstate or semisimple"
            )))
        }
    };
    policy.validate(size)?;
    Ok(policy)
}

fn policy_to_raw(policy: &SamplingPolicy) -> RawPolicy {
    match policy {
        SamplingPolicy::Fixed { mu } => RawPolicy {
            kind: "fixed".to_string(),
            mu: Some(*mu),
            ..RawPolicy::default()
        },
        SamplingPolicy::PerState { mu } => RawPolicy {
            kind: "perstate".to_string(),
            rates: Some(mu.clone()),
            ..RawPolicy::default()
        },
        SamplingPolicy::SemiSimple {
            mu,
            r,
            mu_r1,
            mu_r2,
            p,
        } => RawPolicy {
            kind: "semisimple".to_string(),
            rates: Some(mu.clone()),
            r: Some(*r),
            mu_r1: Some(*mu_r1),
            mu_r2: Some(*mu_r2),
            p: Some(*p),
            ..RawPolicy::default()
        },
    }
}

/// Assemble a full simulation run from a parsed config.
pub fn sim_config_from(raw: &RawConfig, seed_override: Option<u64>) -> Result<SimConfig> {
    let chain = chain_from(raw.chain.as_ref().ok_or_else(|| {
        Error::ParseError("config needs a [chain] section".to_string())
    })?)?;
    let estimator = estimator_from(
        raw.estimator.as_ref().ok_or_else(|| {
            Error::ParseError("config needs an [estimator] section".to_string())
        })?,
        &chain,
    )?;
    let policy = policy_from(
        raw.policy.as_ref().ok_or_else(|| {
            Error::ParseError("config needs a [policy] section".to_string())
        })?,
        chain.size(),
    )?;
    let sim = raw.sim.clone().unwrap_or_default();
    let horizon = sim
        .horizon
        .ok_or_else(|| Error::ParseError("[sim] needs `horizon`".to_string()))?;
    let config = SimConfig {
        warmup: sim.warmup.unwrap_or_else(|| SimConfig::default_warmup(horizon)),
        horizon,
        seed: seed_override.or(sim.seed).unwrap_or(0),
        replications: sim.replications.unwrap_or(1),
        chain,
        estimator,
        policy,
    };
    config.validate()?;
    Ok(config)
}

/// Metadata block written alongside a solved policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionMeta {
    pub omega_budget: f64,
    pub gamma: f64,
    pub omega: f64,
    pub mbf: f64,
    /// "simple" for deterministic per-state rates, "ssp" when one state
    /// randomizes between two rates.
    pub policy_type: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyFile {
    policy: RawPolicy,
    #[serde(skip_serializing_if = "Option::is_none")]
    solution: Option<SolutionMeta>,
}

/// Serialize a solved policy (with metadata) to a TOML policy file.
pub fn policy_file_text(solution: &PolicySolution, omega_budget: f64) -> Result<String> {
    let policy_type = match &solution.policy {
        SamplingPolicy::SemiSimple { .. } => "ssp",
        _ => "simple",
    };
    let file = PolicyFile {
        policy: policy_to_raw(&solution.policy),
        solution: Some(SolutionMeta {
            omega_budget,
            gamma: solution.gamma,
            omega: solution.omega,
            mbf: solution.mbf,
            policy_type: policy_type.to_string(),
        }),
    };
    toml::to_string(&file).map_err(|e| Error::ParseError(format!("policy serialization: {e}")))
}

/// Read a policy file back into a sampling policy (metadata ignored).
pub fn read_policy_file(path: &Path, size: usize) -> Result<SamplingPolicy> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ParseError(format!("cannot read {}: {e}", path.display())))?;
    let file: PolicyFile =
        toml::from_str(&text).map_err(|e| Error::ParseError(format!("policy file: {e}")))?;
    policy_from(&file.policy, size)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMultiConfig {
    source: Vec<RawSource>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    weight: f64,
    chain: RawChain,
    estimator: Option<RawEstimator>,
}

/// Parse a multi-source document (an array of `[[source]]` tables) into
/// weighted sources. A source without an `[source.estimator]` table gets the
/// martingale estimator.
pub fn parse_multi_config(text: &str) -> Result<Vec<Source>> {
    let raw: RawMultiConfig =
        toml::from_str(text).map_err(|e| Error::ParseError(format!("multi config: {e}")))?;
    if raw.source.is_empty() {
        return Err(Error::ParseError(
            "multi config needs at least one [[source]] table".to_string(),
        ));
    }
    raw.source
        .iter()
        .map(|s| {
            let chain = chain_from(&s.chain)?;
            let spec = match &s.estimator {
                Some(raw_est) => estimator_from(raw_est, &chain)?,
                None => EstimatorSpec::Martingale,
            };
            Source::new(chain, spec, s.weight)
        })
        .collect()
}

/// Read and parse a multi-source document.
pub fn load_multi_config(path: &Path) -> Result<Vec<Source>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ParseError(format!("cannot read {}: {e}", path.display())))?;
    parse_multi_config(&text)
}
