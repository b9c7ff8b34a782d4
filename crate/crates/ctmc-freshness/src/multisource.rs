//! Budgeted query-rate allocation across independently monitored sources.
//!
//! Each source `i` is a chain with its own estimator and importance weight
//! `w_i`; the objective is `F(mu) = sum_i w_i MBF_i(mu_i)` subject to
//! `J(mu) = sum_i mu_i <= Omega` and box bounds `rho_l <= mu_i <= rho_u`.
//! The Lagrangian `F(mu) - theta J(mu)` separates across sources, so for a
//! fixed multiplier each source maximizes `w_i MBF_i(mu) - theta mu` on a
//! shared rate grid (smallest maximizer on ties, then one golden-section
//! refinement pass). An outer bisection drives `theta` until the budget is
//! met; `J` along that sequence is non-increasing in `theta`. If the
//! terminal bracket still leaves a rate gap above `eps2` (a discontinuity
//! of the per-source maximizers), a projected gradient ascent over the
//! scaled simplex `{sum mu_i = Omega}` refines the feasible endpoint and
//! the best feasible candidate wins.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::chain::Chain;
use crate::error::{Error, Result};
use crate::estimators::EstimatorSpec;
use crate::freshness::mbf_closed;

/// Weights must sum to one within this tolerance.
const WEIGHT_TOL: f64 = 1e-9;
/// Golden-section bracket width target.
const GOLDEN_TOL: f64 = 1e-10;
/// Grid ties within this margin resolve to the smallest rate.
const TIE_TOL: f64 = 1e-15;
/// Multiplier ceiling for the geometric bracket growth.
const THETA_CAP: f64 = 1e10;

/// One monitored chain with its estimator and importance weight.
#[derive(Debug, Clone)]
pub struct Source {
    pub chain: Chain,
    pub spec: EstimatorSpec,
    pub weight: f64,
    memo: RefCell<HashMap<u64, f64>>,
}

impl Source {
    pub fn new(chain: Chain, spec: EstimatorSpec, weight: f64) -> Result<Self> {
        spec.validate(chain.size())?;
        if weight <= 0.0 {
            return Err(Error::InfeasibleBounds(format!(
                "source weight {weight} must be positive"
            )));
        }
        Ok(Source {
            chain,
            spec,
            weight,
            memo: RefCell::new(HashMap::new()),
        })
    }

    /// Closed-form MBF at rate `mu`, memoized per exact rate value.
    pub fn mbf(&self, mu: f64) -> Result<f64> {
        let key = mu.to_bits();
        if let Some(&v) = self.memo.borrow().get(&key) {
            return Ok(v);
        }
        let v = mbf_closed(&self.chain, &self.spec, mu)?;
        self.memo.borrow_mut().insert(key, v);
        Ok(v)
    }
}

/// The allocation problem: sources, budget and per-source rate bounds.
#[derive(Debug, Clone)]
pub struct SourceSet {
    pub sources: Vec<Source>,
    pub omega_budget: f64,
    pub rho_l: f64,
    pub rho_u: f64,
}

impl SourceSet {
    pub fn new(sources: Vec<Source>, omega_budget: f64, rho_l: f64, rho_u: f64) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::InfeasibleBounds("no sources given".to_string()));
        }
        let wsum: f64 = sources.iter().map(|s| s.weight).sum();
        if (wsum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InfeasibleBounds(format!(
                "source weights sum to {wsum}, expected 1"
            )));
        }
        if !(rho_l > 0.0 && rho_l < omega_budget) {
            return Err(Error::InfeasibleBounds(format!(
                "need 0 < rho_l < budget, got rho_l = {rho_l}, budget = {omega_budget}"
            )));
        }
        if rho_u <= rho_l {
            return Err(Error::InfeasibleBounds(format!(
                "need rho_u > rho_l, got rho_u = {rho_u}, rho_l = {rho_l}"
            )));
        }
        Ok(SourceSet {
            sources,
            omega_budget,
            rho_l,
            rho_u,
        })
    }

    /// Weighted objective `F(mu) = sum_i w_i MBF_i(mu_i)`.
    pub fn objective(&self, rates: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (s, &mu) in self.sources.iter().zip(rates.iter()) {
            total += s.weight * s.mbf(mu)?;
        }
        Ok(total)
    }

    fn feasibility_check(&self) -> Result<()> {
        if self.sources.len() as f64 * self.rho_l > self.omega_budget {
            return Err(Error::InfeasibleBounds(format!(
                "{} sources at minimum rate {} already exceed budget {}",
                self.sources.len(),
                self.rho_l,
                self.omega_budget
            )));
        }
        Ok(())
    }
}

/// A solved allocation: rates, objective, spent budget and the multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub rates: Vec<f64>,
    /// Weighted MBF objective `F`.
    pub objective: f64,
    /// Spent budget `J = sum of rates`.
    pub total: f64,
    /// Multiplier at which the rates were produced (0 when unconstrained).
    pub theta: f64,
    /// Whether the gradient-ascent fallback produced the returned rates.
    pub used_pgd: bool,
    /// Bisection trace of visited (theta, J) pairs, in visit order.
    pub theta_trace: Vec<(f64, f64)>,
}

/// Smallest maximizer of `w MBF(mu) - theta mu` on the grid, then one
/// golden-section pass between the winner's grid neighbors; the refined
/// point is kept only if it strictly improves on the grid value.
pub fn per_source_maximizer(source: &Source, theta: f64, grid: &[f64]) -> Result<f64> {
    if theta < 0.0 {
        return Err(Error::NonpositiveRate(format!("multiplier theta = {theta}")));
    }
    let f = |mu: f64| -> Result<f64> { Ok(source.weight * source.mbf(mu)? - theta * mu) };
    let mut vals = Vec::with_capacity(grid.len());
    for &mu in grid {
        vals.push(f(mu)?);
    }
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let best = vals
        .iter()
        .position(|&v| v >= max - TIE_TOL)
        .expect("nonempty grid has a maximizer");
    let mut lo = if best > 0 { grid[best - 1] } else { grid[0] };
    let mut hi = if best + 1 < grid.len() {
        grid[best + 1]
    } else {
        grid[grid.len() - 1]
    };
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..60 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1)?;
        }
        if hi - lo < GOLDEN_TOL {
            break;
        }
    }
    let xm = 0.5 * (lo + hi);
    Ok(if f(xm)? > vals[best] { xm } else { grid[best] })
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (l, h) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (l + (h - l) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Euclidean projection of `y` onto `{x : sum x = total, lo <= x_i <= hi}`
/// by bisection on the shift `nu` in `x = clip(y - nu, lo, hi)`.
fn project_box_simplex(y: &[f64], total: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut a = y.iter().map(|v| v - hi).fold(f64::INFINITY, f64::min) - 1.0;
    let mut b = y.iter().map(|v| v - lo).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let nu = 0.5 * (a + b);
        let s: f64 = y.iter().map(|v| (v - nu).clamp(lo, hi)).sum();
        if s > total {
            a = nu;
        } else {
            b = nu;
        }
        if b - a < 1e-15 {
            break;
        }
    }
    let nu = 0.5 * (a + b);
    y.iter().map(|v| (v - nu).clamp(lo, hi)).collect()
}

/// Projected gradient ascent of the weighted objective over the scaled
/// simplex `{sum mu_i = budget}` intersected with the rate box. Gradients
/// are forward differences with step `1e-5 mu_i`; the step size backtracks
/// from 1 until the objective improves; iteration stops when the move norm
/// drops below 1e-7 or after 2000 steps.
pub fn projected_gradient_descent(set: &SourceSet, init: &[f64]) -> Result<Allocation> {
    set.feasibility_check()?;
    if init.len() != set.sources.len() {
        return Err(Error::InfeasibleBounds(format!(
            "init has {} rates for {} sources",
            init.len(),
            set.sources.len()
        )));
    }
    let c = init.len();
    let mut x = init.to_vec();
    let mut fx = set.objective(&x)?;
    for _ in 0..2000 {
        let mut grad = vec![0.0; c];
        for i in 0..c {
            let h = 1e-5 * x[i];
            let mut xp = x.clone();
            xp[i] += h;
            grad[i] = (set.objective(&xp)? - fx) / h;
        }
        let mut step = 1.0;
        let mut next: Option<(Vec<f64>, f64)> = None;
        while step > 1e-12 {
            let y: Vec<f64> = x.iter().zip(grad.iter()).map(|(v, g)| v + step * g).collect();
            let xn = project_box_simplex(&y, set.omega_budget, set.rho_l, set.rho_u);
            let fn_ = set.objective(&xn)?;
            if fn_ > fx {
                next = Some((xn, fn_));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_)) = next else {
            break;
        };
        let move_norm: f64 = xn
            .iter()
            .zip(x.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        x = xn;
        fx = fn_;
        if move_norm < 1e-7 {
            break;
        }
    }
    let total: f64 = x.iter().sum();
    Ok(Allocation {
        objective: fx,
        total,
        rates: x,
        theta: 0.0,
        used_pgd: true,
        theta_trace: Vec::new(),
    })
}

/// Full allocation solve: separable maximizers under a bisected multiplier,
/// with the gradient-ascent fallback when the terminal bracket's spent
/// budgets still differ by at least `eps2`.
pub fn lagrangian_bisection(
    set: &SourceSet,
    eps1: f64,
    eps2: f64,
    grid_points: usize,
) -> Result<Allocation> {
    set.feasibility_check()?;
    if eps1 <= 0.0 || eps2 <= 0.0 {
        return Err(Error::NonpositiveRate(format!(
            "tolerances eps1 = {eps1}, eps2 = {eps2} must be positive"
        )));
    }
    let grid = log_grid(set.rho_l, set.rho_u, grid_points.max(2));
    let alloc = |theta: f64| -> Result<Vec<f64>> {
        set.sources
            .iter()
            .map(|s| per_source_maximizer(s, theta, &grid))
            .collect()
    };

    let mu0 = alloc(0.0)?;
    let j0: f64 = mu0.iter().sum();
    if j0 <= set.omega_budget {
        let objective = set.objective(&mu0)?;
        return Ok(Allocation {
            rates: mu0,
            objective,
            total: j0,
            theta: 0.0,
            used_pgd: false,
            theta_trace: Vec::new(),
        });
    }

    let (mut tl, mut tu) = (0.0_f64, 1.0_f64);
    loop {
        let j: f64 = alloc(tu)?.iter().sum();
        if j <= set.omega_budget {
            break;
        }
        tu *= 2.0;
        if tu > THETA_CAP {
            return Err(Error::BracketingFailure(format!(
                "no multiplier below {THETA_CAP} meets budget {}",
                set.omega_budget
            )));
        }
    }

    let mut trace = Vec::new();
    while tu - tl > eps1 {
        let th = 0.5 * (tl + tu);
        let mu = alloc(th)?;
        let j: f64 = mu.iter().sum();
        trace.push((th, j));
        if j > set.omega_budget {
            tl = th;
        } else {
            tu = th;
        }
    }
    let mu_l = alloc(tl)?;
    let mu_u = alloc(tu)?;
    let j_l: f64 = mu_l.iter().sum();
    let j_u: f64 = mu_u.iter().sum();

    if j_l - j_u < eps2 {
        let objective = set.objective(&mu_u)?;
        return Ok(Allocation {
            rates: mu_u,
            objective,
            total: j_u,
            theta: tu,
            used_pgd: false,
            theta_trace: trace,
        });
    }

    // Discontinuity across the bracket: polish the feasible endpoint with
    // gradient ascent and keep the better feasible candidate.
    let refined = projected_gradient_descent(set, &mu_u)?;
    let f_u = set.objective(&mu_u)?;
    let keep_refined =
        refined.total <= set.omega_budget + 1e-6 && refined.objective > f_u;
    if keep_refined {
        Ok(Allocation {
            rates: refined.rates,
            objective: refined.objective,
            total: refined.total,
            theta: tu,
            used_pgd: true,
            theta_trace: trace,
        })
    } else {
        Ok(Allocation {
            rates: mu_u,
            objective: f_u,
            total: j_u,
            theta: tu,
            used_pgd: true,
            theta_trace: trace,
        })
    }
}
