//! The five structured estimators and their stage schedules.
//!
//! Each estimator maps the last received sample `i` and its age `t` to an
//! estimate:
//!
//! - martingale: hold `i` forever;
//! - exponential: switch to `i*` when an exponential(`lambda`) clock fires;
//! - Erlang: switch to `i*` when an auxiliary chain `Y` started at 1 and
//!   jumping at rate `lambda * Gamma` reaches stage `Gamma` (an
//!   Erlang(`Gamma - 1`, `lambda * Gamma`) switch time);
//! - threshold MAP: switch to `i*` once `t > tau`;
//! - piecewise MAP: per-state stage thresholds `tau_i,k` with stage values
//!   `gamma_i,k`, the first stage pinned to `i`.
//!
//! Piecewise-MAP stage values are chosen to maximize the discounted stage
//! mass `int P_ij(t) e^{-mu t} dt`, which is what makes the estimator optimal
//! for the mean binary freshness objective among piecewise-constant
//! schedules on those thresholds. Stages are half-open `[tau_{k-1}, tau_k)`
//! so they partition the age axis.

use crate::chain::Chain;
use crate::error::{Error, Result};
use crate::map::MapStructure;
use crate::quad::StageIntegrator;

/// Tagged description of one of the five estimators.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorSpec {
    /// Hold the last sample.
    Martingale,
    /// Exponential(lambda) switch time to the stationary maximizer.
    Exponential { lambda: f64 },
    /// Erlang(gamma - 1, lambda * gamma) switch time to the maximizer.
    Erlang { gamma: u32, lambda: f64 },
    /// Deterministic switch to the maximizer at age `tau`.
    TauMap { tau: f64 },
    /// Piecewise-constant multi-stage schedule.
    PMap { schedule: PMapSchedule },
}

impl EstimatorSpec {
    /// Enforce the parameter invariants of each kind.
    pub fn validate(&self, size: usize) -> Result<()> {
        match self {
            EstimatorSpec::Martingale => Ok(()),
            EstimatorSpec::Exponential { lambda } => {
                if *lambda > 0.0 {
                    Ok(())
                } else {
                    Err(Error::NonpositiveRate(format!(
                        "exponential estimator lambda = {lambda}"
                    )))
                }
            }
            EstimatorSpec::Erlang { gamma, lambda } => {
                if *gamma < 2 {
                    return Err(Error::InvalidThresholds(format!(
                        "Erlang estimator needs gamma >= 2, got {gamma}"
                    )));
                }
                if *lambda > 0.0 {
                    Ok(())
                } else {
                    Err(Error::NonpositiveRate(format!(
                        "Erlang estimator lambda = {lambda}"
                    )))
                }
            }
            EstimatorSpec::TauMap { tau } => {
                if *tau >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidThresholds(format!(
                        "threshold-MAP tau = {tau} must be nonnegative"
                    )))
                }
            }
            EstimatorSpec::PMap { schedule } => schedule.validate(size),
        }
    }

    /// Whether the estimate is a deterministic function of (sample, age).
    pub fn is_deterministic(&self) -> bool {
        !matches!(
            self,
            EstimatorSpec::Exponential { .. } | EstimatorSpec::Erlang { .. }
        )
    }

    /// Interior stage thresholds and stage values of the deterministic
    /// trajectory from start state `i` (martingale, threshold MAP, or
    /// piecewise MAP).
    pub(crate) fn trajectory(&self, i: usize, i_star: usize) -> Result<(Vec<f64>, Vec<usize>)> {
        match self {
            EstimatorSpec::Martingale => Ok((vec![], vec![i])),
            EstimatorSpec::TauMap { tau } => {
                if tau.is_infinite() {
                    Ok((vec![], vec![i]))
                } else {
                    Ok((vec![*tau], vec![i, i_star]))
                }
            }
            EstimatorSpec::PMap { schedule } => Ok((
                schedule.interior(i).to_vec(),
                schedule.values[i].clone(),
            )),
            _ => Err(Error::RandomizedEstimatorUnsupported(
                "deterministic trajectory requested".to_string(),
            )),
        }
    }
}

/// Per-state stage boundaries and values of a piecewise-MAP estimator.
///
/// `thresholds[i]` is the full nondecreasing list `0 = tau_0 <= ... <= +inf`
/// and `values[i]` holds one value per stage (one fewer than thresholds),
/// with `values[i][0] = i`. Stage `k` covers the half-open age interval
/// `[thresholds[i][k], thresholds[i][k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct PMapSchedule {
    pub thresholds: Vec<Vec<f64>>,
    pub values: Vec<Vec<usize>>,
}

impl PMapSchedule {
    /// Check the structural invariants against a chain of `size` states.
    pub fn validate(&self, size: usize) -> Result<()> {
        if self.thresholds.len() != size || self.values.len() != size {
            return Err(Error::InvalidThresholds(format!(
                "schedule covers {} states, chain has {size}",
                self.thresholds.len()
            )));
        }
        for i in 0..size {
            let ths = &self.thresholds[i];
            let vals = &self.values[i];
            if ths.len() < 2 || ths[0] != 0.0 || !ths[ths.len() - 1].is_infinite() {
                return Err(Error::InvalidThresholds(format!(
                    "state {i}: thresholds must run from 0 to +inf"
                )));
            }
            if ths.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidThresholds(format!(
                    "state {i}: thresholds must be nondecreasing"
                )));
            }
            if vals.len() + 1 != ths.len() {
                return Err(Error::InvalidThresholds(format!(
                    "state {i}: {} stage values for {} thresholds",
                    vals.len(),
                    ths.len()
                )));
            }
            if vals[0] != i {
                return Err(Error::InvalidThresholds(format!(
                    "state {i}: first stage value must be the state itself"
                )));
            }
            if vals.iter().any(|&v| v >= size) {
                return Err(Error::InvalidThresholds(format!(
                    "state {i}: stage value out of range"
                )));
            }
        }
        Ok(())
    }

    /// Interior thresholds of state `i` (without the leading 0 and the
    /// trailing infinity).
    pub fn interior(&self, i: usize) -> &[f64] {
        let ths = &self.thresholds[i];
        &ths[1..ths.len() - 1]
    }

    /// Stage index at the given age (half-open stages).
    pub fn stage_at(&self, i: usize, age: f64) -> usize {
        let ths = &self.thresholds[i];
        let mut stage = 0;
        for k in 1..ths.len() - 1 {
            if age >= ths[k] {
                stage = k;
            } else {
                break;
            }
        }
        stage
    }

    /// Estimate of state `i` at the given age.
    pub fn value_at(&self, i: usize, age: f64) -> usize {
        self.values[i][self.stage_at(i, age)]
    }

    /// Build a full schedule from interior threshold lists, leaving stage
    /// values to the caller.
    pub fn from_interior(interior: &[Vec<f64>], values: Vec<Vec<usize>>) -> PMapSchedule {
        PMapSchedule::assemble(interior, values)
    }

    fn assemble(interior: &[Vec<f64>], values: Vec<Vec<usize>>) -> PMapSchedule {
        let thresholds = interior
            .iter()
            .map(|ths| {
                let mut full = Vec::with_capacity(ths.len() + 2);
                full.push(0.0);
                full.extend_from_slice(ths);
                full.push(f64::INFINITY);
                full
            })
            .collect();
        PMapSchedule { thresholds, values }
    }
}

/// Build a piecewise-MAP schedule on the given interior thresholds, choosing
/// each stage value past the first as
/// `argmax_j int_{tau_{k-1}}^{tau_k} P_ij(t) e^{-mu t} dt`
/// (exact spectral antiderivatives for reversible chains, adaptive Simpson
/// with an analytic exponential tail otherwise); ties break to the lowest
/// state index. The first stage is pinned to the observed state.
pub fn pmap_schedule(
    chain: &Chain,
    mu: f64,
    interior_thresholds: &[Vec<f64>],
) -> Result<PMapSchedule> {
    if mu <= 0.0 {
        return Err(Error::NonpositiveRate(format!("schedule build at mu = {mu}")));
    }
    let size = chain.size();
    if interior_thresholds.len() != size {
        return Err(Error::InvalidThresholds(format!(
            "{} threshold lists for {size} states",
            interior_thresholds.len()
        )));
    }
    for (i, ths) in interior_thresholds.iter().enumerate() {
        if ths.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidThresholds(format!(
                "state {i}: interior thresholds must be finite and nonnegative"
            )));
        }
        if ths.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidThresholds(format!(
                "state {i}: interior thresholds must be nondecreasing"
            )));
        }
    }
    let integrator = StageIntegrator::new(chain)?;
    let mut values = Vec::with_capacity(size);
    for i in 0..size {
        let ths = &interior_thresholds[i];
        let mut vals = vec![i];
        for k in 0..ths.len() {
            let t0 = ths[k];
            let t1 = if k + 1 < ths.len() {
                ths[k + 1]
            } else {
                f64::INFINITY
            };
            let mut best = 0usize;
            let mut best_val = f64::NEG_INFINITY;
            for j in 0..size {
                let v = integrator.integral(i, j, mu, t0, t1);
                if v > best_val + 1e-15 {
                    best = j;
                    best_val = v;
                }
            }
            vals.push(best);
        }
        values.push(vals);
    }
    Ok(PMapSchedule::assemble(interior_thresholds, values))
}

/// Schedule that reproduces the MAP estimate exactly: thresholds are the MAP
/// transition points, values the MAP piecewise values.
pub fn pmap_from_map(chain: &Chain, map: &MapStructure) -> Result<PMapSchedule> {
    pmap_from_map_truncated(chain, map, usize::MAX)
}

/// Schedule keeping only the first `k` MAP transition points per state; the
/// last retained stage value then holds for all larger ages.
pub fn pmap_from_map_truncated(
    chain: &Chain,
    map: &MapStructure,
    k: usize,
) -> Result<PMapSchedule> {
    let size = chain.size();
    if map.points.len() != size {
        return Err(Error::InvalidThresholds(format!(
            "map structure covers {} states, chain has {size}",
            map.points.len()
        )));
    }
    let mut interior = Vec::with_capacity(size);
    let mut values = Vec::with_capacity(size);
    for i in 0..size {
        let keep = map.points[i].len().min(k);
        interior.push(map.points[i][..keep].to_vec());
        values.push(map.values[i][..keep + 1].to_vec());
    }
    let schedule = PMapSchedule::assemble(&interior, values);
    schedule.validate(size)?;
    Ok(schedule)
}

/// Evaluate an estimator at (last sample, age). Deterministic kinds need no
/// auxiliary input; the exponential kind expects `aux_stage = Some(s)` with
/// `s >= 1` meaning the switch clock has fired, and the Erlang kind expects
/// the current auxiliary stage in `1..=gamma` (the estimate switches exactly
/// at stage `gamma`). `i_star` is the stationary maximizer the two-stage
/// estimators switch to.
pub fn evaluate_estimate(
    spec: &EstimatorSpec,
    i_star: usize,
    last_sample: usize,
    age: f64,
    aux_stage: Option<u32>,
) -> Result<usize> {
    if age < 0.0 {
        return Err(Error::NegativeTime(format!("estimator age = {age}")));
    }
    match spec {
        EstimatorSpec::Martingale => Ok(last_sample),
        EstimatorSpec::TauMap { tau } => Ok(if age > *tau { i_star } else { last_sample }),
        EstimatorSpec::PMap { schedule } => Ok(schedule.value_at(last_sample, age)),
        EstimatorSpec::Exponential { .. } => match aux_stage {
            Some(stage) => Ok(if stage >= 1 { i_star } else { last_sample }),
            None => Err(Error::MissingAuxStage(
                "exponential estimator needs its clock state".to_string(),
            )),
        },
        EstimatorSpec::Erlang { gamma, .. } => match aux_stage {
            Some(stage) => Ok(if stage >= *gamma { i_star } else { last_sample }),
            None => Err(Error::MissingAuxStage(
                "Erlang estimator needs its auxiliary stage".to_string(),
            )),
        },
    }
}
