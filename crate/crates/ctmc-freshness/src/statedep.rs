//! State-dependent sampling: joint chain of source and estimate.
//!
//! When the query rate depends on the last sampled state, the pair
//! `(X, Xhat)` is itself a CTMC on `S^2` states. Its generator has three
//! kinds of transitions out of `(i, j)`:
//!
//! - source jumps `i -> k` at rate `Q_{ik}` leaving the estimate alone;
//! - queries at rate `mu_j` (keyed on the last sample `j`) resetting the
//!   pair to `(i, i)`;
//! - the matching diagonal entries `-(q_i + mu_j)` for `i != j` and `-q_i`
//!   on the agreement diagonal, so rows sum to zero.
//!
//! The stationary law `psi_{ij} = P(X = i, Xhat = j)` yields the sampled
//! marginal `pitilde_j = sum_i psi_{ij}`, the average query rate
//! `omega = sum_j pitilde_j mu_j`, and the martingale MBF `tr(psi)`. For
//! deterministic stage estimators a renewal argument gives
//! `MBF = sum_i mu_i pitilde_i E[F_i(mu_i)]`, which reduces to spectral
//! closed forms on reversible chains.
//!
//! A semi-simple policy randomizes the rate in one designated state `r`
//! between `mu_r1` (probability `p`) and `mu_r2`, redrawn at every query
//! whose sample lands in `r`. Its metrics are evaluated through the
//! averaged-rate occupancy together with the harmonic correction
//! `D = (1 - pitilde_r) mu_1 mu_2 + pitilde_r (p mu_1 + (1-p) mu_2)
//! (p mu_2 + (1-p) mu_1)`; the expression is exact at `p in {0, 1}` and a
//! tight approximation in between.

use nalgebra::{DMatrix, DVector};

use crate::chain::Chain;
use crate::error::{Error, Result};
use crate::estimators::EstimatorSpec;
use crate::freshness::expected_fresh_time;
use crate::spectral::spectral_decomposition;

/// Tolerance for the stationarity and normalization checks on `psi`.
const PSI_TOL: f64 = 1e-10;

/// How the query rate is chosen after each sample.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingPolicy {
    /// One rate for every state.
    Fixed { mu: f64 },
    /// A deterministic rate per last-sampled state.
    PerState { mu: Vec<f64> },
    /// Per-state rates with one randomized state: after sampling state `r`
    /// the next inter-query time uses rate `mu_r1` with probability `p` and
    /// `mu_r2` otherwise. The entry `mu[r]` is ignored.
    SemiSimple {
        mu: Vec<f64>,
        r: usize,
        mu_r1: f64,
        mu_r2: f64,
        p: f64,
    },
}

impl SamplingPolicy {
    /// Validate against a chain of `size` states.
    pub fn validate(&self, size: usize) -> Result<()> {
        match self {
            SamplingPolicy::Fixed { mu } => {
                if *mu <= 0.0 {
                    return Err(Error::NonpositiveRate(format!("fixed rate mu = {mu}")));
                }
            }
            SamplingPolicy::PerState { mu } => {
                if mu.len() != size {
                    return Err(Error::NonpositiveRate(format!(
                        "expected {size} per-state rates, got {}",
                        mu.len()
                    )));
                }
                for (i, &m) in mu.iter().enumerate() {
                    if m <= 0.0 {
                        return Err(Error::NonpositiveRate(format!(
                            "per-state rate mu[{i}] = {m}"
                        )));
                    }
                }
            }
            SamplingPolicy::SemiSimple {
                mu,
                r,
                mu_r1,
                mu_r2,
                p,
            } => {
                if mu.len() != size {
                    return Err(Error::NonpositiveRate(format!(
                        "expected {size} per-state rates, got {}",
                        mu.len()
                    )));
                }
                if *r >= size {
                    return Err(Error::NonpositiveRate(format!(
                        "randomized state {r} out of range for {size} states"
                    )));
                }
                for (i, &m) in mu.iter().enumerate() {
                    if i != *r && m <= 0.0 {
                        return Err(Error::NonpositiveRate(format!(
                            "per-state rate mu[{i}] = {m}"
                        )));
                    }
                }
                if *mu_r1 <= 0.0 || *mu_r2 <= 0.0 {
                    return Err(Error::NonpositiveRate(format!(
                        "randomized rates mu_r1 = {mu_r1}, mu_r2 = {mu_r2}"
                    )));
                }
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::NonpositiveRate(format!(
                        "mixing probability p = {p} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Deterministic per-state rates; the semi-simple case substitutes the
    /// averaged rate `p mu_r1 + (1-p) mu_r2` in its randomized state.
    pub fn effective_rates(&self, size: usize) -> Result<Vec<f64>> {
        self.validate(size)?;
        Ok(match self {
            SamplingPolicy::Fixed { mu } => vec![*mu; size],
            SamplingPolicy::PerState { mu } => mu.clone(),
            SamplingPolicy::SemiSimple {
                mu,
                r,
                mu_r1,
                mu_r2,
                p,
            } => {
                let mut rates = mu.clone();
                rates[*r] = p * mu_r1 + (1.0 - p) * mu_r2;
                rates
            }
        })
    }
}

/// Stationary law of the joint source/estimate chain.
#[derive(Debug, Clone, PartialEq)]
pub struct JointStationary {
    /// `psi[(i, j)] = P(X = i, Xhat = j)`.
    pub psi: DMatrix<f64>,
    /// Law of the last sampled state: column sums of `psi`.
    pub pi_tilde: DVector<f64>,
    /// Long-run average query rate `sum_j pi_tilde_j mu_j`.
    pub omega: f64,
}

fn check_rates(chain: &Chain, rates: &[f64]) -> Result<()> {
    if rates.len() != chain.size() {
        return Err(Error::NonpositiveRate(format!(
            "expected {} per-state rates, got {}",
            chain.size(),
            rates.len()
        )));
    }
    for (i, &m) in rates.iter().enumerate() {
        if m <= 0.0 {
            return Err(Error::NonpositiveRate(format!("per-state rate mu[{i}] = {m}")));
        }
    }
    Ok(())
}

/// Generator of the joint chain `(X, Xhat)` on `S^2` row-major pair states.
pub fn build_joint_generator(chain: &Chain, rates: &[f64]) -> Result<DMatrix<f64>> {
    check_rates(chain, rates)?;
    let s = chain.size();
    let n = s * s;
    let mut qm = DMatrix::<f64>::zeros(n, n);
    for i in 0..s {
        for j in 0..s {
            let row = i * s + j;
            for k in 0..s {
                for l in 0..s {
                    let col = k * s + l;
                    qm[(row, col)] = if k == l && k == i && i != j {
                        rates[j]
                    } else if k != i && l == j {
                        chain.rate(i, k)
                    } else if k == i && i != j && j == l {
                        -(chain.exit_rate(i) + rates[j])
                    } else if k == i && l == j {
                        -chain.exit_rate(i)
                    } else {
                        0.0
                    };
                }
            }
        }
    }
    Ok(qm)
}

/// Stationary law of the joint chain under deterministic per-state rates.
pub fn joint_stationary(chain: &Chain, rates: &[f64]) -> Result<JointStationary> {
    let qm = build_joint_generator(chain, rates)?;
    let s = chain.size();
    let n = s * s;
    let mut a = qm.transpose();
    let mut b = DVector::<f64>::zeros(n);
    for c in 0..n {
        a[(n - 1, c)] = 1.0;
    }
    b[n - 1] = 1.0;
    let flat = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("joint stationary solve".to_string()))?;
    let psi = DMatrix::from_fn(s, s, |i, j| flat[i * s + j]);
    let total: f64 = psi.iter().sum();
    let min = psi.iter().cloned().fold(f64::INFINITY, f64::min);
    if (total - 1.0).abs() > PSI_TOL || min < -PSI_TOL {
        return Err(Error::SingularSystem(format!(
            "joint stationary law failed validation: total = {total}, min = {min}"
        )));
    }
    let pi_tilde = DVector::from_fn(s, |j, _| psi.column(j).sum());
    let omega = pi_tilde
        .iter()
        .zip(rates.iter())
        .map(|(p, m)| p * m)
        .sum();
    Ok(JointStationary {
        psi,
        pi_tilde,
        omega,
    })
}

/// MBF under deterministic per-state query rates.
///
/// The martingale estimator is `tr(psi)` exactly; threshold and piecewise
/// MAP estimators assemble `sum_i mu_i pitilde_i E[F_i(mu_i)]`, with
/// spectral closed forms on reversible chains and stage quadrature
/// otherwise. Randomized stage clocks have no stationary closed form here
/// and are rejected.
pub fn mbf_statedep(chain: &Chain, spec: &EstimatorSpec, rates: &[f64]) -> Result<f64> {
    let joint = joint_stationary(chain, rates)?;
    match spec {
        EstimatorSpec::Martingale => Ok(joint.psi.trace()),
        EstimatorSpec::TauMap { tau } => {
            if chain.reversible() {
                mbf_statedep_tau_rev(chain, rates, *tau, &joint)
            } else {
                mbf_statedep_via_fresh_times(chain, spec, rates, &joint)
            }
        }
        EstimatorSpec::PMap { schedule } => {
            schedule.validate(chain.size())?;
            if chain.reversible() {
                let sd = spectral_decomposition(chain)?;
                let s = chain.size();
                let pi = chain.pi();
                let mut total = 0.0;
                for i in 0..s {
                    let ths = &schedule.thresholds[i];
                    for (k, &ik) in schedule.values[i].iter().enumerate() {
                        let (t0, t1) = (ths[k], ths[k + 1]);
                        let weight = (pi[ik] / pi[i]).sqrt() * joint.pi_tilde[i];
                        for j in 0..s {
                            let z = sd.d[j] + rates[i];
                            let e0 = (-z * t0).exp();
                            let e1 = if t1.is_infinite() {
                                0.0
                            } else {
                                (-z * t1).exp()
                            };
                            total += weight
                                * sd.u[(i, j)]
                                * sd.u[(ik, j)]
                                * rates[i]
                                / z
                                * (e0 - e1);
                        }
                    }
                }
                Ok(total)
            } else {
                mbf_statedep_via_fresh_times(chain, spec, rates, &joint)
            }
        }
        EstimatorSpec::Exponential { .. } | EstimatorSpec::Erlang { .. } => {
            Err(Error::RandomizedEstimatorUnsupported(
                "state-dependent closed forms cover deterministic stage estimators only"
                    .to_string(),
            ))
        }
    }
}

/// Reversible threshold-MAP closed form under per-state rates.
fn mbf_statedep_tau_rev(
    chain: &Chain,
    rates: &[f64],
    tau: f64,
    joint: &JointStationary,
) -> Result<f64> {
    if tau < 0.0 {
        return Err(Error::InvalidThresholds(format!(
            "threshold tau = {tau} must be nonnegative"
        )));
    }
    let sd = spectral_decomposition(chain)?;
    let (i_star, _) = chain.stationary_maximizer();
    let pi = chain.pi();
    let s = chain.size();
    let mut total = 0.0;
    for i in 0..s {
        for k in 0..s {
            let hold = joint.pi_tilde[i] * sd.u[(i, k)] * sd.u[(i, k)];
            let switch =
                (pi[i_star] / pi[i]).sqrt() * joint.pi_tilde[i] * sd.u[(i, k)] * sd.u[(i_star, k)];
            let z = sd.d[k] + rates[i];
            let decay = if tau.is_infinite() { 0.0 } else { (-z * tau).exp() };
            total += rates[i] / z * (hold - (hold - switch) * decay);
        }
    }
    Ok(total)
}

/// Renewal assembly `sum_i mu_i pitilde_i E[F_i(mu_i)]` for deterministic
/// stage estimators on general chains.
fn mbf_statedep_via_fresh_times(
    chain: &Chain,
    spec: &EstimatorSpec,
    rates: &[f64],
    joint: &JointStationary,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..chain.size() {
        total += rates[i] * joint.pi_tilde[i] * expected_fresh_time(chain, spec, i, rates[i])?;
    }
    Ok(total)
}

pub(crate) struct SemiSimpleCore {
    /// Per-state rates with the randomized state replaced by its mean rate.
    pub rates: Vec<f64>,
    pub pi_tilde: DVector<f64>,
    /// Harmonic denominator mixing the two candidate rates.
    pub denom: f64,
    /// Long-run average query rate.
    pub rate: f64,
}

pub(crate) fn semi_simple_core(
    chain: &Chain,
    base: &[f64],
    r: usize,
    mu1: f64,
    mu2: f64,
    p: f64,
) -> Result<SemiSimpleCore> {
    let mu_avg = p * mu1 + (1.0 - p) * mu2;
    let mut rates = base.to_vec();
    rates[r] = mu_avg;
    let joint = joint_stationary(chain, &rates)?;
    let ptr = joint.pi_tilde[r];
    let denom = (1.0 - ptr) * mu1 * mu2
        + ptr * (p * mu1 + (1.0 - p) * mu2) * (p * mu2 + (1.0 - p) * mu1);
    let weighted: f64 = joint
        .pi_tilde
        .iter()
        .zip(rates.iter())
        .map(|(pt, m)| pt * m)
        .sum();
    let rate = mu1 * mu2 * weighted / denom;
    Ok(SemiSimpleCore {
        rates,
        pi_tilde: joint.pi_tilde,
        denom,
        rate,
    })
}

/// MBF and average query rate of a sampling policy.
///
/// Deterministic policies report the exact stationary pair
/// `(mbf_statedep, omega)`. Semi-simple policies use the averaged-rate
/// occupancy with the harmonic rate correction; the pair is exact at
/// `p in {0, 1}` and approximate (relative error on the order of 1e-3 in
/// the hardest mixes) at interior `p`.
pub fn ssp_metrics(
    chain: &Chain,
    spec: &EstimatorSpec,
    policy: &SamplingPolicy,
) -> Result<(f64, f64)> {
    policy.validate(chain.size())?;
    match policy {
        SamplingPolicy::Fixed { .. } | SamplingPolicy::PerState { .. } => {
            let rates = policy.effective_rates(chain.size())?;
            let joint = joint_stationary(chain, &rates)?;
            let mbf = mbf_statedep(chain, spec, &rates)?;
            Ok((mbf, joint.omega))
        }
        SamplingPolicy::SemiSimple {
            mu,
            r,
            mu_r1,
            mu_r2,
            p,
        } => {
            if matches!(
                spec,
                EstimatorSpec::Exponential { .. } | EstimatorSpec::Erlang { .. }
            ) {
                return Err(Error::RandomizedEstimatorUnsupported(
                    "semi-simple metrics cover deterministic stage estimators only".to_string(),
                ));
            }
            let core = semi_simple_core(chain, mu, *r, *mu_r1, *mu_r2, *p)?;
            let mu_avg = p * mu_r1 + (1.0 - p) * mu_r2;
            let mut num = mu_avg
                * core.pi_tilde[*r]
                * (p * expected_fresh_time(chain, spec, *r, *mu_r1)?
                    + (1.0 - p) * expected_fresh_time(chain, spec, *r, *mu_r2)?);
            for i in 0..chain.size() {
                if i != *r {
                    num += core.rates[i]
                        * core.pi_tilde[i]
                        * expected_fresh_time(chain, spec, i, core.rates[i])?;
                }
            }
            let mbf = *mu_r1 * *mu_r2 * num / core.denom;
            Ok((mbf, core.rate))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_chain;
    use crate::freshness::{mbf_martingale, mbf_tau_map};

    fn binary(alpha: f64, beta: f64) -> Chain {
        build_chain(
            DMatrix::from_row_slice(2, 2, &[-alpha, alpha, beta, -beta]),
            "binary",
        )
        .unwrap()
    }

    fn bdc3() -> Chain {
        build_chain(
            DMatrix::from_row_slice(
                3,
                3,
                &[-1.5, 1.0, 0.5, 0.5, -0.7, 0.2, 0.25, 0.2, -0.45],
            ),
            "bdc3",
        )
        .unwrap()
    }

    #[test]
    fn joint_generator_rows_sum_to_zero() {
        let c = bdc3();
        let qm = build_joint_generator(&c, &[0.4, 0.9, 1.3]).unwrap();
        for r in 0..qm.nrows() {
            let s: f64 = qm.row(r).iter().sum();
            assert!(s.abs() < 1e-12, "joint generator row {r} sums to {s}");
        }
    }

    #[test]
    fn binary_psi_matches_closed_form() {
        let (al, be, m1, m2) = (0.8, 1.3, 0.6, 1.7);
        let c = binary(al, be);
        let j = joint_stationary(&c, &[m1, m2]).unwrap();
        let d = (al + be) * (m1 * m2 + al * m1 + be * m2);
        let exact = [
            [be * m2 * (be + m1) / d, al * be * m1 / d],
            [al * be * m2 / d, al * m1 * (m2 + al) / d],
        ];
        for i in 0..2 {
            for k in 0..2 {
                assert!(
                    (j.psi[(i, k)] - exact[i][k]).abs() < 1e-12,
                    "psi[{i}][{k}] = {} vs closed form {}",
                    j.psi[(i, k)],
                    exact[i][k]
                );
            }
        }
        let mbf = mbf_statedep(&c, &EstimatorSpec::Martingale, &[m1, m2]).unwrap();
        let formula = ((al + be) * m1 * m2 + be * be * m2 + al * al * m1) / d;
        assert!(
            (mbf - formula).abs() < 1e-12,
            "binary martingale MBF {mbf} vs closed form {formula}"
        );
    }

    #[test]
    fn psi_marginal_recovers_stationary_law() {
        let c = bdc3();
        let j = joint_stationary(&c, &[0.4, 0.9, 1.3]).unwrap();
        for i in 0..3 {
            let row: f64 = j.psi.row(i).iter().sum();
            assert!(
                (row - c.pi()[i]).abs() < 1e-10,
                "source marginal of psi row {i} should equal pi"
            );
        }
    }

    #[test]
    fn uniform_rates_reduce_to_fixed_rate_formulas() {
        let c = bdc3();
        let mu = 0.7;
        let rates = vec![mu; 3];
        let me = mbf_statedep(&c, &EstimatorSpec::Martingale, &rates).unwrap();
        assert!(
            (me - mbf_martingale(&c, mu).unwrap()).abs() < 1e-10,
            "uniform per-state rates must reproduce the fixed-rate martingale value"
        );
        let tm = mbf_statedep(&c, &EstimatorSpec::TauMap { tau: 0.9 }, &rates).unwrap();
        assert!(
            (tm - mbf_tau_map(&c, mu, 0.9).unwrap()).abs() < 1e-10,
            "uniform per-state rates must reproduce the fixed-rate threshold-MAP value"
        );
        let j = joint_stationary(&c, &rates).unwrap();
        assert!(
            (j.omega - mu).abs() < 1e-12,
            "uniform rates give average query rate mu"
        );
    }

    #[test]
    fn flow_balance_identity_holds() {
        // Query flow into a state equals query flow out of it in
        // stationarity: mu_i sum_j psi_{ji} = sum_k psi_{ik} mu_k.
        let c = bdc3();
        let rates = [0.35, 1.1, 0.8];
        let j = joint_stationary(&c, &rates).unwrap();
        for i in 0..3 {
            let lhs = rates[i] * j.pi_tilde[i];
            let rhs: f64 = (0..3).map(|k| j.psi[(i, k)] * rates[k]).sum();
            assert!(
                (lhs - rhs).abs() < 1e-12,
                "query flow balance violated at state {i}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn semi_simple_degenerate_p_matches_deterministic() {
        let c = bdc3();
        let policy = SamplingPolicy::SemiSimple {
            mu: vec![0.5, 0.8, 0.3],
            r: 1,
            mu_r1: 1.4,
            mu_r2: 0.2,
            p: 1.0,
        };
        let (mbf, rate) = ssp_metrics(&c, &EstimatorSpec::Martingale, &policy).unwrap();
        let det = vec![0.5, 1.4, 0.3];
        let expect = mbf_statedep(&c, &EstimatorSpec::Martingale, &det).unwrap();
        let j = joint_stationary(&c, &det).unwrap();
        assert!(
            (mbf - expect).abs() < 1e-10,
            "p = 1 must collapse to the deterministic policy: {mbf} vs {expect}"
        );
        assert!(
            (rate - j.omega).abs() < 1e-10,
            "p = 1 average rate must collapse to omega: {rate} vs {}",
            j.omega
        );
    }

    #[test]
    fn policy_validation_rejects_bad_input() {
        let c = bdc3();
        assert!(matches!(
            SamplingPolicy::Fixed { mu: 0.0 }.validate(3),
            Err(Error::NonpositiveRate(_))
        ));
        assert!(matches!(
            SamplingPolicy::PerState { mu: vec![0.5, 0.5] }.validate(3),
            Err(Error::NonpositiveRate(_))
        ));
        assert!(matches!(
            mbf_statedep(
                &c,
                &EstimatorSpec::Exponential { lambda: 1.0 },
                &[0.5, 0.5, 0.5]
            ),
            Err(Error::RandomizedEstimatorUnsupported(_))
        ));
    }
}
