//! Closed-form mean binary freshness under a fixed sampling rate.
//!
//! Queries arrive as a Poisson process of rate `mu`; between queries the
//! estimator follows its stage schedule. The MBF closed forms are:
//!
//! - exponential estimator (rate `lambda` switch to `i*`):
//!   `mu * tr(R Pi) + lambda/(mu+lambda) * pi_{i*}` with
//!   `R = ((mu+lambda) I - Q^T)^{-1}`; for reversible chains equivalently
//!   `sum_k a_k mu / (d_k + mu + lambda) + lambda/(mu+lambda) pi_{i*}`;
//! - Erlang estimator (`Gamma` stages at rate `lambda * Gamma`):
//!   `mu * sum_{k=1}^{Gamma-1} (lambda Gamma)^{k-1} tr(R^k Pi)
//!    + (lambda Gamma / (mu + lambda Gamma))^{Gamma-1} pi_{i*}` with
//!   `R = ((mu + lambda Gamma) I - Q^T)^{-1}`, powers applied by repeated
//!   linear solves;
//! - threshold MAP (switch at age `tau`):
//!   `sum_k a_k mu/(d_k+mu) (1 - e^{-(d_k+mu) tau}) + e^{-mu tau} pi_{i*}`
//!   for reversible chains;
//! - piecewise MAP: a triple sum over states, eigencomponents and stages
//!   with coefficients `sqrt(pi_i pi_{i_k}) U_ij U_{i_k j}`;
//! - the martingale estimator is the exponential form at `lambda = 0`.
//!
//! Every deterministic estimator also admits the generic renewal-reward
//! path `MBF = mu * sum_i pi_i E[F_i]` where
//! `E[F_i] = int_0^inf P_{i, Xhat(t)}(t) e^{-mu t} dt` is the expected fresh
//! time after observing `i`; reversible chains evaluate the integral by
//! spectral antiderivatives and general chains by adaptive quadrature.

use nalgebra::DMatrix;

use crate::chain::Chain;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorSpec, PMapSchedule};
use crate::map::map_structure;
use crate::quad::StageIntegrator;
use crate::spectral::spectral_decomposition;

/// Which evaluation path produced an MBF value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MbfMethod {
    /// Estimator-specific closed form.
    Closed,
    /// Generic renewal-reward assembly over expected fresh times.
    General,
    /// Monte Carlo estimate from the simulator.
    Empirical,
}

impl std::fmt::Display for MbfMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MbfMethod::Closed => write!(f, "closed"),
            MbfMethod::General => write!(f, "general"),
            MbfMethod::Empirical => write!(f, "empirical"),
        }
    }
}

/// MBF value together with the path that produced it and, for empirical
/// values, the standard error of the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FreshnessReport {
    pub value: f64,
    pub method: MbfMethod,
    pub std_error: Option<f64>,
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 {
        Ok(())
    } else {
        Err(Error::NonpositiveRate(format!("sampling rate mu = {mu}")))
    }
}

/// Solve `((c) I - Q^T) X = diag(pi)` and return the solution matrix.
fn resolvent_against_pi(chain: &Chain, c: f64) -> Result<DMatrix<f64>> {
    let s = chain.size();
    let mut m = -chain.q().transpose();
    for i in 0..s {
        m[(i, i)] += c;
    }
    let rhs = DMatrix::from_diagonal(chain.pi());
    m.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularResolvent(format!("resolvent at shift {c}")))
}

/// MBF of the exponential estimator at query rate `mu` and clock rate
/// `lambda >= 0` (`lambda = 0` degenerates to the martingale estimator).
pub fn mbf_exponential(chain: &Chain, mu: f64, lambda: f64) -> Result<f64> {
    check_mu(mu)?;
    if lambda < 0.0 {
        return Err(Error::NonpositiveRate(format!("clock rate lambda = {lambda}")));
    }
    let (i_star, _) = chain.stationary_maximizer();
    if chain.reversible() {
        let sd = spectral_decomposition(chain)?;
        let mut val = 0.0;
        for k in 0..chain.size() {
            val += sd.a[k] * mu / (sd.d[k] + mu + lambda);
        }
        if lambda > 0.0 {
            val += lambda / (mu + lambda) * chain.pi()[i_star];
        }
        Ok(val)
    } else {
        let x = resolvent_against_pi(chain, mu + lambda)?;
        let mut val = mu * x.trace();
        if lambda > 0.0 {
            val += lambda / (mu + lambda) * chain.pi()[i_star];
        }
        Ok(val)
    }
}

/// MBF of the martingale estimator (exponential form at `lambda = 0`).
pub fn mbf_martingale(chain: &Chain, mu: f64) -> Result<f64> {
    mbf_exponential(chain, mu, 0.0)
}

/// MBF of the Erlang estimator with `gamma >= 2` stages at clock rate
/// `lambda > 0`. Matrix powers act through repeated linear solves; no
/// explicit inverse is formed.
pub fn mbf_erlang(chain: &Chain, mu: f64, gamma: u32, lambda: f64) -> Result<f64> {
    check_mu(mu)?;
    if gamma < 2 {
        return Err(Error::InvalidThresholds(format!(
            "Erlang estimator needs gamma >= 2, got {gamma}"
        )));
    }
    if lambda <= 0.0 {
        return Err(Error::NonpositiveRate(format!("clock rate lambda = {lambda}")));
    }
    let (i_star, _) = chain.stationary_maximizer();
    let lg = lambda * f64::from(gamma);
    let tail = (lg / (mu + lg)).powi(gamma as i32 - 1) * chain.pi()[i_star];
    if chain.reversible() {
        let sd = spectral_decomposition(chain)?;
        let mut val = 0.0;
        for k in 0..chain.size() {
            let z = sd.d[k] + mu;
            val += sd.a[k] * mu / z * (1.0 - (lg / (z + lg)).powi(gamma as i32 - 1));
        }
        Ok(val + tail)
    } else {
        let s = chain.size();
        let mut m = -chain.q().transpose();
        for i in 0..s {
            m[(i, i)] += mu + lg;
        }
        let lu = m.lu();
        let mut y = lu
            .solve(&DMatrix::from_diagonal(chain.pi()))
            .ok_or_else(|| Error::SingularResolvent("Erlang resolvent".to_string()))?;
        let mut total = y.trace();
        for _ in 2..gamma {
            y = lu
                .solve(&y)
                .ok_or_else(|| Error::SingularResolvent("Erlang resolvent power".to_string()))?
                * lg;
            total += y.trace();
        }
        Ok(mu * total + tail)
    }
}

/// MBF of the threshold-MAP estimator switching to the stationary maximizer
/// at age `tau` (`tau = +inf` degenerates to the martingale estimator,
/// `tau = 0` pins the estimate at the maximizer).
pub fn mbf_tau_map(chain: &Chain, mu: f64, tau: f64) -> Result<f64> {
    check_mu(mu)?;
    if tau < 0.0 {
        return Err(Error::InvalidThresholds(format!(
            "threshold tau = {tau} must be nonnegative"
        )));
    }
    if chain.reversible() {
        let sd = spectral_decomposition(chain)?;
        let (i_star, _) = chain.stationary_maximizer();
        if tau.is_infinite() {
            let mut val = 0.0;
            for k in 0..chain.size() {
                val += sd.a[k] * mu / (sd.d[k] + mu);
            }
            return Ok(val);
        }
        let mut val = 0.0;
        for k in 0..chain.size() {
            let z = sd.d[k] + mu;
            val += sd.a[k] * mu / z * (1.0 - (-z * tau).exp());
        }
        Ok(val + (-mu * tau).exp() * chain.pi()[i_star])
    } else {
        mbf_general(chain, &EstimatorSpec::TauMap { tau }, mu)
    }
}

/// MBF of a piecewise-MAP estimator on the given schedule.
pub fn mbf_pmap(chain: &Chain, mu: f64, schedule: &PMapSchedule) -> Result<f64> {
    check_mu(mu)?;
    schedule.validate(chain.size())?;
    if !chain.reversible() {
        return mbf_general(
            chain,
            &EstimatorSpec::PMap {
                schedule: schedule.clone(),
            },
            mu,
        );
    }
    let sd = spectral_decomposition(chain)?;
    let s = chain.size();
    let pi = chain.pi();
    let mut total = 0.0;
    for i in 0..s {
        let ths = &schedule.thresholds[i];
        for (k, &ik) in schedule.values[i].iter().enumerate() {
            let (t0, t1) = (ths[k], ths[k + 1]);
            let weight = (pi[i] * pi[ik]).sqrt();
            for j in 0..s {
                let z = sd.d[j] + mu;
                let e0 = (-z * t0).exp();
                let e1 = if t1.is_infinite() { 0.0 } else { (-z * t1).exp() };
                total += weight * sd.u[(i, j)] * sd.u[(ik, j)] * mu / z * (e0 - e1);
            }
        }
    }
    Ok(total)
}

/// Closed-form MBF for any estimator at a fixed sampling rate `mu`.
pub fn mbf_closed(chain: &Chain, spec: &EstimatorSpec, mu: f64) -> Result<f64> {
    spec.validate(chain.size())?;
    match spec {
        EstimatorSpec::Martingale => mbf_martingale(chain, mu),
        EstimatorSpec::Exponential { lambda } => mbf_exponential(chain, mu, *lambda),
        EstimatorSpec::Erlang { gamma, lambda } => mbf_erlang(chain, mu, *gamma, *lambda),
        EstimatorSpec::TauMap { tau } => mbf_tau_map(chain, mu, *tau),
        EstimatorSpec::PMap { schedule } => mbf_pmap(chain, mu, schedule),
    }
}

/// Analytic MBF together with the evaluation path that produced it: the
/// estimator-specific closed form where one exists (all estimators on
/// reversible chains; martingale, exponential and Erlang estimators on any
/// chain), otherwise the generic renewal-reward assembly.
pub fn mbf_report(chain: &Chain, spec: &EstimatorSpec, mu: f64) -> Result<FreshnessReport> {
    let value = mbf_closed(chain, spec, mu)?;
    let method = match spec {
        EstimatorSpec::TauMap { .. } | EstimatorSpec::PMap { .. } if !chain.reversible() => {
            MbfMethod::General
        }
        _ => MbfMethod::Closed,
    };
    Ok(FreshnessReport {
        value,
        method,
        std_error: None,
    })
}

/// Expected fresh time `E[F_i] = int_0^inf P_{i, Xhat(t)}(t) e^{-mu t} dt`
/// for a deterministic estimator observed in state `i`.
pub fn expected_fresh_time(
    chain: &Chain,
    spec: &EstimatorSpec,
    i: usize,
    mu: f64,
) -> Result<f64> {
    check_mu(mu)?;
    let integrator = StageIntegrator::new(chain)?;
    expected_fresh_time_with(&integrator, chain, spec, i, mu)
}

pub(crate) fn expected_fresh_time_with(
    integrator: &StageIntegrator,
    chain: &Chain,
    spec: &EstimatorSpec,
    i: usize,
    mu: f64,
) -> Result<f64> {
    let (i_star, _) = chain.stationary_maximizer();
    let (interior, values) = spec.trajectory(i, i_star)?;
    let mut total = 0.0;
    for (k, &v) in values.iter().enumerate() {
        let t0 = if k == 0 { 0.0 } else { interior[k - 1] };
        let t1 = if k < interior.len() {
            interior[k]
        } else {
            f64::INFINITY
        };
        total += integrator.integral(i, v, mu, t0, t1);
    }
    Ok(total)
}

/// Renewal-reward MBF `mu * sum_i pi_i E[F_i]` for a deterministic
/// estimator; agrees with the estimator-specific closed forms.
pub fn mbf_general(chain: &Chain, spec: &EstimatorSpec, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let integrator = StageIntegrator::new(chain)?;
    let mut total = 0.0;
    for i in 0..chain.size() {
        total += chain.pi()[i] * expected_fresh_time_with(&integrator, chain, spec, i, mu)?;
    }
    Ok(mu * total)
}

/// Compute the martingale MBF and the threshold-MAP MBF at the chain's
/// global MAP switch time `tau*`, returning the pair `(martingale, tau*)`.
/// The second value is never below the first beyond rounding: holding the
/// sample is dominated by also switching to the stationary maximizer at the
/// time the MAP estimate would.
pub fn verify_martingale_vs_taustar(chain: &Chain, mu: f64) -> Result<(f64, f64)> {
    check_mu(mu)?;
    let (_, unique) = chain.stationary_maximizer();
    if !unique {
        return Err(Error::NoUniqueMaximum(format!(
            "'{}' has a tied stationary maximum",
            chain.label()
        )));
    }
    let horizon = if chain.reversible() {
        30.0 / spectral_decomposition(chain)?.spectral_gap()
    } else {
        30.0 * chain.mean_sojourn()
    };
    let map = map_structure(chain, horizon, horizon / 2000.0)?;
    let me = mbf_martingale(chain, mu)?;
    let tm = mbf_tau_map(chain, mu, map.tau_star)?;
    Ok((me, tm))
}
