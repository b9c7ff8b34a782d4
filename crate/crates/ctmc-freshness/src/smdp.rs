//! Optimal state-dependent sampling as a semi-Markov decision process.
//!
//! Decision epochs are query instants; the decision state is the sampled
//! source state. Choosing rate `mu` in state `i` makes the next sampled
//! state follow the absorption law
//! `P(i, mu) = -mu e_i^T (Q - mu I)^{-1}`, earns the expected fresh time
//! `E[F_{i, mu}] - gamma` as reward, and takes expected time `1/mu`. For a
//! fixed multiplier `gamma >= 0`, policy iteration alternates relative
//! value determination (the linear system
//! `Rz / mu_s + V_s = R(s, mu_s) + sum_j P_j(s, mu_s) V_j`, `V_{S-1} = 0`)
//! with greedy improvement, breaking ties toward smaller rates.
//!
//! The budget constraint `omega <= Omega` is handled by an outer bisection
//! on `gamma`: the average query rate of the `gamma`-optimal policy is
//! non-increasing in `gamma`. If the bracket collapses with a small rate
//! gap, the feasible endpoint policy is returned; otherwise the two
//! endpoint policies are spliced state by state and one state is
//! randomized between its two candidate rates, with the mixing probability
//! solved so the average rate meets the budget exactly.

use nalgebra::{DMatrix, DVector};

use crate::chain::Chain;
use crate::error::{Error, Result};
use crate::estimators::EstimatorSpec;
use crate::freshness::expected_fresh_time_with;
use crate::quad::StageIntegrator;
use crate::statedep::{
    joint_stationary, mbf_statedep, semi_simple_core, ssp_metrics, SamplingPolicy,
};

/// Absorption-probability rows must sum to one within this tolerance.
const TRANSITION_TOL: f64 = 1e-10;
/// Relative-value equations must be satisfied within this tolerance.
const RESIDUAL_TOL: f64 = 1e-8;
/// Policy-iteration sweep cap before reporting degenerate cycling.
const MAX_POLICY_ITERATIONS: usize = 500;
/// Multiplier ceiling for the geometric bracket growth.
const GAMMA_CAP: f64 = 1e8;
/// Width target of the mixing-probability bisection.
const P_BISECT_TOL: f64 = 1e-10;

/// Distribution of the next sampled state when querying out of state `i`
/// at rate `mu`: `-mu e_i^T (Q - mu I)^{-1}`, computed by a linear solve.
pub fn absorption_probs(chain: &Chain, i: usize, mu: f64) -> Result<DVector<f64>> {
    if mu <= 0.0 {
        return Err(Error::NonpositiveRate(format!("query rate mu = {mu}")));
    }
    let s = chain.size();
    let mut m = chain.q().transpose();
    for k in 0..s {
        m[(k, k)] -= mu;
    }
    let mut b = DVector::<f64>::zeros(s);
    b[i] = -mu;
    let x = m
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSolve(format!("absorption solve at rate {mu}")))?;
    let total: f64 = x.iter().sum();
    let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    if (total - 1.0).abs() > TRANSITION_TOL || min < -TRANSITION_TOL {
        return Err(Error::SingularSolve(format!(
            "absorption law failed validation: total = {total}, min = {min}"
        )));
    }
    Ok(x)
}

/// Log-spaced action grid `[min(1e-3, Omega/100), 20 Omega]`.
pub fn default_rate_grid(omega: f64, points: usize) -> Vec<f64> {
    let lo = (1e-3_f64).min(omega / 100.0).ln();
    let hi = (20.0 * omega).ln();
    (0..points)
        .map(|k| (lo + (hi - lo) * k as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Precomputed decision-process tables for one chain, estimator and grid.
#[derive(Debug, Clone)]
pub struct SmdpInstance {
    chain: Chain,
    spec: EstimatorSpec,
    grid: Vec<f64>,
    /// `transition[s]` is an `actions x S` matrix of absorption rows.
    transition: Vec<DMatrix<f64>>,
    /// `fresh[(s, a)] = E[F_{s, grid[a]}]`.
    fresh: DMatrix<f64>,
    /// Lagrange multiplier subtracted from every reward.
    pub gamma: f64,
}

impl SmdpInstance {
    /// Build the tables; fresh times and absorption rows are precomputed
    /// once per (state, action) pair since the solver revisits them.
    pub fn build(chain: &Chain, spec: &EstimatorSpec, grid: &[f64], gamma: f64) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::NonpositiveRate("empty action grid".to_string()));
        }
        for &g in grid {
            if g <= 0.0 {
                return Err(Error::NonpositiveRate(format!("grid rate {g}")));
            }
        }
        if gamma < 0.0 {
            return Err(Error::NonpositiveRate(format!("multiplier gamma = {gamma}")));
        }
        spec.validate(chain.size())?;
        if !spec.is_deterministic() {
            return Err(Error::RandomizedEstimatorUnsupported(
                "decision-process rewards need deterministic stage estimators".to_string(),
            ));
        }
        let s = chain.size();
        let na = grid.len();
        let integrator = StageIntegrator::new(chain)?;
        let mut transition = Vec::with_capacity(s);
        let mut fresh = DMatrix::<f64>::zeros(s, na);
        for state in 0..s {
            let mut rows = DMatrix::<f64>::zeros(na, s);
            for (a, &mu) in grid.iter().enumerate() {
                let p = absorption_probs(chain, state, mu)?;
                rows.row_mut(a).copy_from(&p.transpose());
                fresh[(state, a)] = expected_fresh_time_with(&integrator, chain, spec, state, mu)?;
            }
            transition.push(rows);
        }
        Ok(SmdpInstance {
            chain: chain.clone(),
            spec: spec.clone(),
            grid: grid.to_vec(),
            transition,
            fresh,
            gamma,
        })
    }

    /// Same tables under a different multiplier.
    pub fn with_gamma(&self, gamma: f64) -> Self {
        let mut inst = self.clone();
        inst.gamma = gamma;
        inst
    }

    pub fn states(&self) -> usize {
        self.chain.size()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Next-state law for (state, action index).
    pub fn transition(&self, s: usize, a: usize) -> DVector<f64> {
        self.transition[s].row(a).transpose()
    }

    /// Reward `E[F_{s, grid[a]}] - gamma`.
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.fresh[(s, a)] - self.gamma
    }

    /// Expected holding time `1 / grid[a]`.
    pub fn sojourn(&self, a: usize) -> f64 {
        1.0 / self.grid[a]
    }
}

/// A solved sampling policy together with its decision-process artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySolution {
    /// Per-state rates, possibly randomized in one state.
    pub policy: SamplingPolicy,
    /// Long-run average reward of the final evaluated simple policy.
    pub avg_reward: f64,
    /// Relative values of the final evaluated simple policy; last entry 0.
    pub relative_values: Vec<f64>,
    /// MBF of the returned policy under its estimator.
    pub mbf: f64,
    /// Long-run average query rate of the returned policy.
    pub omega: f64,
    /// Multiplier at which the returned policy was produced.
    pub gamma: f64,
    /// Bisection trace of visited (gamma, omega) pairs, in visit order.
    pub gamma_trace: Vec<(f64, f64)>,
}

struct Evaluated {
    policy: Vec<usize>,
    avg_reward: f64,
    values: Vec<f64>,
}

/// One relative-value determination for a fixed simple policy.
fn evaluate_policy(inst: &SmdpInstance, policy: &[usize]) -> Result<(f64, DVector<f64>)> {
    let s = inst.states();
    let mut a_sys = DMatrix::<f64>::zeros(s, s);
    let mut b = DVector::<f64>::zeros(s);
    for row in 0..s {
        let p = &inst.transition[row];
        for col in 0..s - 1 {
            let mut v = -p[(policy[row], col)];
            if col == row {
                v += 1.0;
            }
            a_sys[(row, col)] = v;
        }
        a_sys[(row, s - 1)] = inst.sojourn(policy[row]);
        b[row] = inst.reward(row, policy[row]);
    }
    let sol = a_sys
        .clone()
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("relative-value solve".to_string()))?;
    let residual = (&a_sys * &sol - &b).abs().max();
    if residual > RESIDUAL_TOL {
        return Err(Error::SingularSystem(format!(
            "relative-value residual {residual} exceeds {RESIDUAL_TOL}"
        )));
    }
    let mut values = DVector::<f64>::zeros(s);
    for k in 0..s - 1 {
        values[k] = sol[k];
    }
    Ok((sol[s - 1], values))
}

fn iterate(inst: &SmdpInstance) -> Result<Evaluated> {
    let s = inst.states();
    let na = inst.grid.len();
    let mut policy = vec![0usize; s];
    for _ in 0..MAX_POLICY_ITERATIONS {
        let (avg_reward, values) = evaluate_policy(inst, &policy)?;
        let mut next = vec![0usize; s];
        for state in 0..s {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0usize;
            for a in 0..na {
                let cont: f64 = (0..s)
                    .map(|j| inst.transition[state][(a, j)] * values[j])
                    .sum();
                let val = inst.reward(state, a) + cont - avg_reward * inst.sojourn(a);
                // Strict improvement keeps the first (smallest-rate) maximizer.
                if val > best {
                    best = val;
                    best_a = a;
                }
            }
            next[state] = best_a;
        }
        if next == policy {
            return Ok(Evaluated {
                policy,
                avg_reward,
                values: values.iter().cloned().collect(),
            });
        }
        policy = next;
    }
    Err(Error::MaxIterationsExceeded(format!(
        "policy iteration still cycling after {MAX_POLICY_ITERATIONS} sweeps; last policy {policy:?}"
    )))
}

/// Unconstrained policy iteration at the instance's multiplier.
pub fn policy_iteration(inst: &SmdpInstance) -> Result<PolicySolution> {
    let ev = iterate(inst)?;
    let rates: Vec<f64> = ev.policy.iter().map(|&a| inst.grid[a]).collect();
    let joint = joint_stationary(&inst.chain, &rates)?;
    let mbf = mbf_statedep(&inst.chain, &inst.spec, &rates)?;
    Ok(PolicySolution {
        policy: SamplingPolicy::PerState { mu: rates },
        avg_reward: ev.avg_reward,
        relative_values: ev.values,
        mbf,
        omega: joint.omega,
        gamma: inst.gamma,
        gamma_trace: Vec::new(),
    })
}

/// Budget-constrained solve: bisection on the multiplier, with a one-state
/// randomization when the grid leaves a rate gap across the budget.
pub fn solve_constrained(
    chain: &Chain,
    spec: &EstimatorSpec,
    omega_budget: f64,
    grid: &[f64],
    eps1: f64,
    eps2: f64,
) -> Result<PolicySolution> {
    if omega_budget <= 0.0 {
        return Err(Error::NonpositiveRate(format!("budget Omega = {omega_budget}")));
    }
    if eps1 <= 0.0 || eps2 <= 0.0 {
        return Err(Error::NonpositiveRate(format!(
            "tolerances eps1 = {eps1}, eps2 = {eps2} must be positive"
        )));
    }
    let base = SmdpInstance::build(chain, spec, grid, 0.0)?;
    let run = |gamma: f64| -> Result<(Evaluated, Vec<f64>, f64)> {
        let inst = base.with_gamma(gamma);
        let ev = iterate(&inst)?;
        let rates: Vec<f64> = ev.policy.iter().map(|&a| grid[a]).collect();
        let omega = joint_stationary(chain, &rates)?.omega;
        Ok((ev, rates, omega))
    };

    let (ev0, rates0, om0) = run(0.0)?;
    if om0 <= omega_budget {
        let mbf = mbf_statedep(chain, spec, &rates0)?;
        return Ok(PolicySolution {
            policy: SamplingPolicy::PerState { mu: rates0 },
            avg_reward: ev0.avg_reward,
            relative_values: ev0.values,
            mbf,
            omega: om0,
            gamma: 0.0,
            gamma_trace: vec![(0.0, om0)],
        });
    }

    let (mut gl, mut gu) = (0.0_f64, 1.0_f64);
    loop {
        let (_, _, om_u) = run(gu)?;
        if om_u <= omega_budget {
            break;
        }
        gu *= 2.0;
        if gu > GAMMA_CAP {
            return Err(Error::BracketingFailure(format!(
                "no multiplier below {GAMMA_CAP} meets budget {omega_budget}"
            )));
        }
    }

    let mut trace = Vec::new();
    while gu - gl > eps1 {
        let g = 0.5 * (gl + gu);
        let (_, _, om) = run(g)?;
        trace.push((g, om));
        if om > omega_budget {
            gl = g;
        } else {
            gu = g;
        }
    }
    let (_, rates_l, om_l) = run(gl)?;
    let (ev_u, rates_u, om_u) = run(gu)?;

    if om_l - om_u < eps2 {
        let mbf = mbf_statedep(chain, spec, &rates_u)?;
        return Ok(PolicySolution {
            policy: SamplingPolicy::PerState { mu: rates_u },
            avg_reward: ev_u.avg_reward,
            relative_values: ev_u.values,
            mbf,
            omega: om_u,
            gamma: gu,
            gamma_trace: trace,
        });
    }

    // Splice the endpoint policies: states below the pivot take the tight
    // (gamma_l, higher-rate) actions, and the pivot state randomizes
    // between its two candidate rates to land on the budget.
    let s = chain.size();
    let omega_at = |k: usize| -> Result<f64> {
        let mixed: Vec<f64> = (0..s)
            .map(|st| if st < k { rates_l[st] } else { rates_u[st] })
            .collect();
        Ok(joint_stationary(chain, &mixed)?.omega)
    };
    let mut pivot = None;
    let mut prev = omega_at(0)?;
    for k in 1..=s {
        let cur = omega_at(k)?;
        if cur > omega_budget && prev <= omega_budget {
            pivot = Some(k);
            break;
        }
        prev = cur;
    }
    let kp = pivot.ok_or_else(|| {
        Error::BracketingFailure("no splice point straddles the budget".to_string())
    })?;
    let r = kp - 1;
    let base_rates: Vec<f64> = (0..s)
        .map(|st| if st + 1 < kp { rates_l[st] } else { rates_u[st] })
        .collect();
    let (mu1, mu2) = (rates_l[r], rates_u[r]);

    let rate_at = |p: f64| -> Result<f64> {
        Ok(semi_simple_core(chain, &base_rates, r, mu1, mu2, p)?.rate)
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate_at(mid)? > omega_budget {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < P_BISECT_TOL {
            break;
        }
    }
    let p = 0.5 * (lo + hi);
    let policy = SamplingPolicy::SemiSimple {
        mu: base_rates,
        r,
        mu_r1: mu1,
        mu_r2: mu2,
        p,
    };
    let (mbf, omega) = ssp_metrics(chain, spec, &policy)?;
    Ok(PolicySolution {
        policy,
        avg_reward: ev_u.avg_reward,
        relative_values: ev_u.values,
        mbf,
        omega,
        gamma: 0.5 * (gl + gu),
        gamma_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_chain;

    fn binary() -> Chain {
        build_chain(
            DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
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
    fn binary_absorption_hand_value() {
        let p = absorption_probs(&binary(), 0, 1.0).unwrap();
        assert!(
            (p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12,
            "symmetric binary absorption at mu=1 should be (2/3, 1/3), got ({}, {})",
            p[0],
            p[1]
        );
    }

    #[test]
    fn absorption_limits() {
        let c = bdc3();
        let fast = absorption_probs(&c, 1, 1e6).unwrap();
        assert!(
            fast[1] > 1.0 - 1e-5,
            "instant re-query should stay in place, got {}",
            fast[1]
        );
        let slow = absorption_probs(&c, 1, 1e-6).unwrap();
        for i in 0..3 {
            assert!(
                (slow[i] - c.pi()[i]).abs() < 1e-4,
                "infinitely patient query should land on the stationary law"
            );
        }
    }

    #[test]
    fn single_action_grid_is_the_policy() {
        let c = bdc3();
        let inst = SmdpInstance::build(&c, &EstimatorSpec::Martingale, &[0.8], 0.0).unwrap();
        let sol = policy_iteration(&inst).unwrap();
        assert_eq!(
            sol.policy,
            SamplingPolicy::PerState {
                mu: vec![0.8, 0.8, 0.8]
            },
            "a one-action grid admits exactly one policy"
        );
        assert!(
            (sol.omega - 0.8).abs() < 1e-12,
            "uniform policy query rate must equal its rate"
        );
        assert!(
            (sol.avg_reward - sol.mbf).abs() < 1e-9,
            "at gamma = 0 the average reward is the MBF: {} vs {}",
            sol.avg_reward,
            sol.mbf
        );
    }

    #[test]
    fn optimal_beats_uniform_on_same_instance() {
        let c = bdc3();
        let grid = default_rate_grid(0.5, 40);
        let inst = SmdpInstance::build(&c, &EstimatorSpec::Martingale, &grid, 0.0).unwrap();
        let sol = policy_iteration(&inst).unwrap();
        let uniform = mbf_statedep(&c, &EstimatorSpec::Martingale, &vec![0.5; 3]).unwrap();
        assert!(
            sol.mbf >= uniform - 1e-12,
            "unconstrained optimum {} cannot lose to the uniform policy {}",
            sol.mbf,
            uniform
        );
    }

    #[test]
    fn huge_budget_returns_unconstrained_policy() {
        let c = bdc3();
        let grid = default_rate_grid(0.5, 40);
        let sol =
            solve_constrained(&c, &EstimatorSpec::Martingale, 1e6, &grid, 1e-5, 1e-3).unwrap();
        assert_eq!(sol.gamma, 0.0, "a non-binding budget needs no multiplier");
        assert!(
            matches!(&sol.policy, SamplingPolicy::PerState { mu }
                if mu.iter().all(|&m| (m - grid[grid.len() - 1]).abs() < 1e-12)),
            "with no budget pressure every state queries at the top grid rate"
        );
    }

    #[test]
    fn constrained_solution_respects_budget_and_trace_monotone() {
        let c = bdc3();
        let grid = default_rate_grid(0.3, 60);
        let sol =
            solve_constrained(&c, &EstimatorSpec::Martingale, 0.3, &grid, 1e-5, 1e-3).unwrap();
        assert!(
            sol.omega <= 0.3 + 1e-6,
            "returned policy busts the budget: omega = {}",
            sol.omega
        );
        let mut by_gamma = sol.gamma_trace.clone();
        by_gamma.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        for w in by_gamma.windows(2) {
            assert!(
                w[0].1 >= w[1].1 - 1e-12,
                "average rate must be non-increasing in the multiplier: {:?}",
                w
            );
        }
        let uniform = mbf_statedep(&c, &EstimatorSpec::Martingale, &vec![0.3; 3]).unwrap();
        assert!(
            sol.mbf >= uniform - 1e-9,
            "constrained optimum {} cannot lose to the uniform policy {}",
            sol.mbf,
            uniform
        );
    }

    #[test]
    fn transition_rows_are_probability_vectors() {
        let c = bdc3();
        let grid = default_rate_grid(0.4, 10);
        let inst = SmdpInstance::build(&c, &EstimatorSpec::Martingale, &grid, 0.0).unwrap();
        for s in 0..3 {
            for a in 0..grid.len() {
                let row = inst.transition(s, a);
                let total: f64 = row.iter().sum();
                assert!(
                    (total - 1.0).abs() < 1e-10 && row.iter().all(|&x| x >= -1e-12),
                    "transition ({s}, {a}) is not a probability vector"
                );
            }
        }
    }
}
