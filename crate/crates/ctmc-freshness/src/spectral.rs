//! Spectral decomposition of time-reversible chains.
//!
//! For a reversible chain the similarity transform `Pi^{1/2} Q Pi^{-1/2}` is
//! symmetric and diagonalizes as `U D U^T` with orthonormal columns `u_k` and
//! eigenvalues `-d_k <= 0` (exactly one zero). Transition probabilities then
//! have the closed form
//!
//! ```text
//! P_ij(t) = sqrt(pi_j / pi_i) * sum_k U_ik U_jk e^{-d_k t},
//! ```
//!
//! and the coefficients `a_k = sum_j pi_j U_jk^2` drive every reversible
//! fast path for closed-form freshness values.

use nalgebra::{DMatrix, DVector};

use crate::chain::Chain;
use crate::error::{Error, Result};

/// Eigenstructure of a reversible chain: orthogonal `U`, decay rates `d`
/// (ascending, `d[0] ~ 0`), coefficients `a`, and cached `Pi^{+-1/2}`
/// scalings. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// Orthogonal eigenvector matrix; column `k` belongs to decay rate `d[k]`.
    pub u: DMatrix<f64>,
    /// Nonnegative decay rates, ascending; exactly one is (numerically) zero.
    pub d: DVector<f64>,
    /// Coefficients `a_k = sum_j pi_j U_jk^2`; they sum to one.
    pub a: DVector<f64>,
    /// Stationary distribution of the decomposed chain.
    pub pi: DVector<f64>,
    /// Entrywise square roots of `pi`.
    pub sqrt_pi: DVector<f64>,
    /// Entrywise inverse square roots of `pi`.
    pub inv_sqrt_pi: DVector<f64>,
}

impl SpectralDecomposition {
    /// Smallest nonzero decay rate (spectral gap).
    pub fn spectral_gap(&self) -> f64 {
        self.d
            .iter()
            .cloned()
            .filter(|&x| x > 1e-10)
            .fold(f64::INFINITY, f64::min)
    }

    /// Single transition probability `P_ij(t)` from the eigenexpansion.
    pub fn transition_prob(&self, i: usize, j: usize, t: f64) -> f64 {
        let s = self.u.nrows();
        let mut sum = 0.0;
        for k in 0..s {
            sum += self.u[(i, k)] * self.u[(j, k)] * (-self.d[k] * t).exp();
        }
        self.sqrt_pi[j] * self.inv_sqrt_pi[i] * sum
    }

    /// Row `i` of `P(t)` from the eigenexpansion.
    pub fn transition_row(&self, i: usize, t: f64) -> DVector<f64> {
        let s = self.u.nrows();
        let mut weights = DVector::zeros(s);
        for k in 0..s {
            weights[k] = self.u[(i, k)] * (-self.d[k] * t).exp();
        }
        let mut row = DVector::zeros(s);
        for j in 0..s {
            let mut sum = 0.0;
            for k in 0..s {
                sum += self.u[(j, k)] * weights[k];
            }
            row[j] = sum * self.sqrt_pi[j] * self.inv_sqrt_pi[i];
        }
        row
    }
}

/// Symmetric eigendecomposition of `Pi^{1/2} Q Pi^{-1/2}` for a reversible
/// chain. Decay rates are returned ascending so that `d[0]` is the zero
/// eigenvalue; columns of `U` are permuted consistently.
pub fn spectral_decomposition(chain: &Chain) -> Result<SpectralDecomposition> {
    if !chain.reversible() {
        return Err(Error::NotReversible(format!(
            "spectral decomposition of '{}'",
            chain.label()
        )));
    }
    let s = chain.size();
    let pi = chain.pi().clone();
    let sqrt_pi = pi.map(f64::sqrt);
    let inv_sqrt_pi = sqrt_pi.map(|x| 1.0 / x);
    let mut sym = DMatrix::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            sym[(i, j)] = sqrt_pi[i] * chain.q()[(i, j)] * inv_sqrt_pi[j];
        }
    }
    // Symmetrize exactly to guard against rounding in the scaling.
    let sym = (&sym + &sym.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..s).collect();
    // Decay rates are the negated eigenvalues; sort ascending.
    order.sort_by(|&a, &b| {
        (-eig.eigenvalues[a])
            .partial_cmp(&(-eig.eigenvalues[b]))
            .expect("eigenvalues are finite")
    });
    let mut u = DMatrix::zeros(s, s);
    let mut d = DVector::zeros(s);
    for (col, &k) in order.iter().enumerate() {
        d[col] = -eig.eigenvalues[k];
        for row in 0..s {
            u[(row, col)] = eig.eigenvectors[(row, k)];
        }
    }
    let mut a = DVector::zeros(s);
    for k in 0..s {
        a[k] = (0..s).map(|j| pi[j] * u[(j, k)] * u[(j, k)]).sum();
    }
    Ok(SpectralDecomposition {
        u,
        d,
        a,
        pi,
        sqrt_pi,
        inv_sqrt_pi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_chain;

    #[test]
    fn symmetric_binary_spectrum() {
        let c = build_chain(
            DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
            "binary",
        )
        .unwrap();
        let sd = spectral_decomposition(&c).unwrap();
        assert!(sd.d[0].abs() < 1e-12, "first decay rate must be zero");
        assert!((sd.d[1] - 2.0).abs() < 1e-12, "second decay rate must be 2");
        assert!((sd.a[0] - 0.5).abs() < 1e-12, "a_0 must be 1/2");
        assert!((sd.a[1] - 0.5).abs() < 1e-12, "a_1 must be 1/2");
    }

    #[test]
    fn non_reversible_is_rejected() {
        // One-directional 3-ring: irreducible but violates detailed balance.
        let c = build_chain(
            DMatrix::from_row_slice(
                3,
                3,
                &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0, 1.0, 0.0, -1.0],
            ),
            "ring3",
        )
        .unwrap();
        assert!(!c.reversible(), "one-directional ring is not reversible");
        assert!(matches!(
            spectral_decomposition(&c),
            Err(Error::NotReversible(_))
        ));
    }

    #[test]
    fn reconstruction_matches_uniformization() {
        let c = build_chain(
            DMatrix::from_row_slice(
                3,
                3,
                &[-1.5, 1.0, 0.5, 0.5, -0.7, 0.2, 0.25, 0.2, -0.45],
            ),
            "bdc3",
        )
        .unwrap();
        assert!(c.reversible(), "constructed chain should be reversible");
        let sd = spectral_decomposition(&c).unwrap();
        for &t in &[0.1, 1.0, 10.0] {
            let p = c.transition_matrix(t).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let rec = sd.transition_prob(i, j, t);
                    assert!(
                        (rec - p[(i, j)]).abs() < 1e-10,
                        "eigenexpansion and uniformization disagree at t={t}: {} vs {}",
                        rec,
                        p[(i, j)]
                    );
                }
            }
        }
    }
}
