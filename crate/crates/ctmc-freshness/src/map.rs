//! Piecewise-constant structure of the MAP estimate.
//!
//! Given the last sample `i` and its age `t`, the MAP estimate is
//! `argmax_j P_ij(t)`. As a function of `t` it is piecewise constant with
//! finitely many transition points for reversible chains; one-directional
//! rings oscillate forever, so callers supply an explicit horizon. Beyond
//! the largest transition time `tau*` the MAP estimate equals the stationary
//! maximizer `i*` from every start state (when that maximizer is unique).
//!
//! Transition points are isolated by scanning a uniform grid for argmax
//! changes and refining each change by bisection on the sign of
//! `P_ij(t) - P_ik(t)` for the two competing states, to an absolute time
//! tolerance of `1e-9`.

use nalgebra::DVector;

use crate::chain::Chain;
use crate::error::Result;
use crate::spectral::{spectral_decomposition, SpectralDecomposition};

/// Absolute time tolerance of the bisection refinement.
const REFINE_TOL: f64 = 1e-9;

/// Transition times and values of the MAP estimate per starting state,
/// plus the global switch time `tau*` and the stationary maximizer `i*`.
#[derive(Debug, Clone)]
pub struct MapStructure {
    /// `points[i]` lists the strictly increasing transition times from
    /// start state `i` (empty when the MAP estimate never changes).
    pub points: Vec<Vec<f64>>,
    /// `values[i]` lists the piecewise-constant MAP values; it has one more
    /// entry than `points[i]` and starts at `i` (the age-zero estimate).
    pub values: Vec<Vec<usize>>,
    /// Supremum over states of the last transition time (0 when constant).
    pub tau_star: f64,
    /// Largest-index maximizer of the stationary distribution.
    pub i_star: usize,
    /// Whether the stationary maximum is unique within `1e-12`.
    pub unique_max: bool,
}

impl MapStructure {
    /// MAP value from start state `i` at age `t` (half-open stages).
    pub fn value_at(&self, i: usize, t: f64) -> usize {
        let mut stage = 0;
        for (k, &point) in self.points[i].iter().enumerate() {
            if t >= point {
                stage = k + 1;
            } else {
                break;
            }
        }
        self.values[i][stage]
    }
}

/// Row evaluator that prefers the spectral expansion when available.
enum RowEval<'a> {
    Spectral(Box<SpectralDecomposition>),
    Uniformized(&'a Chain),
}

impl RowEval<'_> {
    fn row(&self, i: usize, t: f64) -> DVector<f64> {
        match self {
            RowEval::Spectral(sd) => sd.transition_row(i, t),
            RowEval::Uniformized(chain) => chain
                .transition_row(i, t)
                .expect("grid times are nonnegative"),
        }
    }
}

fn lowest_index_argmax(row: &DVector<f64>) -> usize {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..row.len()).find(|&j| row[j] >= m).unwrap_or(0)
}

/// MAP estimate `argmax_j P_ij(t)`, ties broken by lowest state index.
pub fn map_estimate(chain: &Chain, i: usize, t: f64) -> Result<usize> {
    let row = chain.transition_row(i, t)?;
    Ok(lowest_index_argmax(&row))
}

/// Locate all MAP transition points within `horizon` on a grid of the given
/// step, refining each to `1e-9` absolute time tolerance. The global
/// `tau_star` is the largest refined transition time; when the stationary
/// maximum is not unique the `unique_max` flag is false and `i_star` is the
/// largest-index maximizer.
pub fn map_structure(chain: &Chain, horizon: f64, grid_step: f64) -> Result<MapStructure> {
    assert!(horizon > 0.0, "map_structure horizon must be positive");
    assert!(grid_step > 0.0, "map_structure grid step must be positive");
    let size = chain.size();
    let eval = if chain.reversible() {
        RowEval::Spectral(Box::new(spectral_decomposition(chain)?))
    } else {
        RowEval::Uniformized(chain)
    };
    let n = (horizon / grid_step).round().max(1.0) as usize;
    let step = horizon / n as f64;

    let mut points = Vec::with_capacity(size);
    let mut values = Vec::with_capacity(size);
    for i in 0..size {
        let mut pts = Vec::new();
        let mut vals = vec![i];
        let mut prev = i; // P(0) = I, so the age-zero argmax is i itself.
        for g in 1..=n {
            let t = g as f64 * step;
            let cur = lowest_index_argmax(&eval.row(i, t));
            if cur != prev {
                let (mut lo, mut hi) = ((g - 1) as f64 * step, t);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    let row = eval.row(i, mid);
                    if row[prev] >= row[cur] {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < REFINE_TOL {
                        break;
                    }
                }
                pts.push(0.5 * (lo + hi));
                vals.push(cur);
                prev = cur;
            }
        }
        points.push(pts);
        values.push(vals);
    }

    let (i_star, unique_max) = chain.stationary_maximizer();
    let tau_star = points
        .iter()
        .filter_map(|p| p.last().copied())
        .fold(0.0, f64::max);
    Ok(MapStructure {
        points,
        values,
        tau_star,
        i_star,
        unique_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_chain;
    use nalgebra::DMatrix;

    #[test]
    fn age_zero_estimate_is_the_sample() {
        let c = build_chain(
            DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
            "binary",
        )
        .unwrap();
        assert_eq!(map_estimate(&c, 1, 0.0).unwrap(), 1, "P(0) = I pins the argmax");
    }

    #[test]
    fn symmetric_binary_map_is_constant() {
        // P_11(t) > 1/2 > P_12(t) for all finite t, so no transitions.
        let c = build_chain(
            DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
            "binary",
        )
        .unwrap();
        let ms = map_structure(&c, 10.0, 10.0 / 2000.0).unwrap();
        assert!(ms.points[0].is_empty(), "state 0 must have no transition");
        assert!(ms.points[1].is_empty(), "state 1 must have no transition");
        assert_eq!(ms.tau_star, 0.0, "constant MAP means tau* = 0");
        assert!(!ms.unique_max, "uniform stationary law has no unique max");
        assert_eq!(ms.i_star, 1, "largest-index maximizer convention");
    }

    #[test]
    fn value_at_respects_half_open_stages() {
        let ms = MapStructure {
            points: vec![vec![1.0, 2.0]],
            values: vec![vec![0, 1, 0]],
            tau_star: 2.0,
            i_star: 0,
            unique_max: true,
        };
        assert_eq!(ms.value_at(0, 0.0), 0);
        assert_eq!(ms.value_at(0, 1.0), 1, "boundary belongs to the next stage");
        assert_eq!(ms.value_at(0, 1.999), 1);
        assert_eq!(ms.value_at(0, 2.0), 0);
    }
}
