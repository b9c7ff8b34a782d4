//! Chain construction, stationary analysis, uniformized transition matrices,
//! and the piecewise structure of the maximum a posteriori (MAP) estimate,
//! checked against frozen reference values and against the defining
//! invariants on randomized generators.

mod common;

use common::{assert_close, flag, index_lists, int, node, num, num_lists, nums, reference};
use ctmc_freshness::{
    build_chain, default_map_grid, default_map_structure, preset_chain, spectral_decomposition,
    Chain, PRESET_NAMES,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[test]
fn preset_generators_match_reference() {
    let data = reference();
    for name in PRESET_NAMES {
        let chain = preset_chain(name).expect("preset builds");
        let q = common::matrix(data, &format!("presets/{name}/q"));
        assert_eq!(chain.size(), q.nrows(), "{name}: size");
        for i in 0..chain.size() {
            for j in 0..chain.size() {
                assert_close(chain.rate(i, j), q[(i, j)], 1e-12, &format!("{name}: q[{i},{j}]"));
            }
        }
    }
}

#[test]
fn preset_stationary_facts_match_reference() {
    let data = reference();
    for name in PRESET_NAMES {
        let chain = preset_chain(name).expect("preset builds");
        let pi = nums(data, &format!("presets/{name}/pi"));
        for (i, want) in pi.iter().enumerate() {
            assert_close(chain.pi()[i], *want, 1e-12, &format!("{name}: pi[{i}]"));
        }
        assert_eq!(
            chain.reversible(),
            flag(data, &format!("presets/{name}/reversible")),
            "{name}: reversibility flag"
        );
        let (i_star, unique) = chain.stationary_maximizer();
        assert_eq!(unique, flag(data, &format!("presets/{name}/unique_max")), "{name}: unique max");
        if !node(data, &format!("presets/{name}/i_star")).is_null() {
            assert_eq!(i_star, int(data, &format!("presets/{name}/i_star")), "{name}: i_star");
        }
        let sum_pi_q: f64 = (0..chain.size()).map(|i| chain.pi()[i] * chain.exit_rate(i)).sum();
        assert_close(
            sum_pi_q,
            num(data, &format!("presets/{name}/sum_pi_q")),
            1e-12,
            &format!("{name}: mean transition rate"),
        );
    }
}

#[test]
fn preset_map_structure_matches_reference() {
    let data = reference();
    for name in PRESET_NAMES {
        if name == "ring4" {
            continue; // covered by ring4_map_oscillation: its late crossings
                      // sit at the rounding noise floor of the posteriors
        }
        let chain = preset_chain(name).expect("preset builds");
        let map = default_map_structure(&chain).expect("map structure");
        let (horizon, _) = default_map_grid(&chain).expect("map grid");
        assert_close(horizon, num(data, &format!("presets/{name}/map_horizon")), 1e-12, &format!("{name}: map horizon"));
        assert_close(map.tau_star, num(data, &format!("presets/{name}/tau_star")), 1e-8, &format!("{name}: tau_star"));
        let points = num_lists(data, &format!("presets/{name}/map_points"));
        let values = index_lists(data, &format!("presets/{name}/map_values"));
        assert_eq!(map.points.len(), points.len(), "{name}: state count");
        for i in 0..points.len() {
            assert_eq!(
                map.points[i].len(),
                points[i].len(),
                "{name}: state {i} switching point count (got {:?}, expected {:?})",
                map.points[i],
                points[i]
            );
            for (k, want) in points[i].iter().enumerate() {
                assert_close(map.points[i][k], *want, 1e-8, &format!("{name}: point[{i}][{k}]"));
            }
            assert_eq!(map.values[i], values[i], "{name}: stage values for state {i}");
        }
    }
}

/// The four-state ring has a tied stationary maximum and complex transient
/// eigenvalues, so its MAP estimate oscillates between the two tied states
/// indefinitely. Early crossings are well conditioned and pinned exactly;
/// late ones drown in rounding noise (the competing posteriors differ by
/// under 1e-14 past age 36), so only the count and spacing are checked there.
#[test]
fn ring4_map_oscillation() {
    let data = reference();
    let chain = preset_chain("ring4").expect("preset builds");
    let map = default_map_structure(&chain).expect("map structure");
    assert!(!map.unique_max, "ring4 stationary maximum is tied");
    let points = num_lists(data, "presets/ring4/map_points");
    let values = index_lists(data, "presets/ring4/map_values");
    // Half-period of the oscillation, taken from two adjacent settled
    // reference crossings.
    let half_period = points[0][2] - points[0][1];
    for i in 0..4 {
        assert!(
            map.points[i].len() >= 10,
            "state {i}: expected at least 10 crossings within the horizon, got {}",
            map.points[i].len()
        );
        for k in 0..6 {
            assert_close(
                map.points[i][k],
                points[i][k],
                1e-6,
                &format!("ring4: point[{i}][{k}]"),
            );
        }
        assert_eq!(&map.values[i][..7], &values[i][..7], "ring4: early stage values for state {i}");
        for k in 1..6 {
            let gap = map.points[i][k + 1] - map.points[i][k];
            assert_close(gap, half_period, 1e-5, &format!("ring4: spacing after point[{i}][{k}]"));
        }
    }
}

#[test]
fn generator_validation_rejects_bad_input() {
    let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -1.9]);
    assert!(build_chain(q, "bad-rows").is_err(), "nonzero row sums must be rejected");
    let q = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 2.0, -2.0]);
    assert!(build_chain(q, "bad-sign").is_err(), "negative off-diagonals must be rejected");
    let q = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
    assert!(build_chain(q, "reducible").is_err(), "reducible chains must be rejected");
}

/// Fully connected random generator with off-diagonal rates in
/// `[0.05, 1.05)`; always irreducible.
fn random_chain(seed: u64, size: usize) -> Chain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DMatrix::zeros(size, size);
    for i in 0..size {
        for j in 0..size {
            if i != j {
                q[(i, j)] = 0.05 + rng.random::<f64>();
            }
        }
        let row_sum: f64 = (0..size).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
        q[(i, i)] = -row_sum;
    }
    build_chain(q, "random").expect("random generator is valid")
}

/// Random reversible generator: draw a positive stationary law and symmetric
/// conductances, then set `q_ij = c_ij / pi_i` so detailed balance holds.
fn random_reversible_chain(seed: u64, size: usize) -> Chain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pi: Vec<f64> = (0..size).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total: f64 = pi.iter().sum();
    for p in &mut pi {
        *p /= total;
    }
    let mut c = DMatrix::zeros(size, size);
    for i in 0..size {
        for j in (i + 1)..size {
            let v = 0.05 + rng.random::<f64>();
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    let mut q = DMatrix::zeros(size, size);
    for i in 0..size {
        for j in 0..size {
            if i != j {
                q[(i, j)] = c[(i, j)] / pi[i];
            }
        }
        let row_sum: f64 = (0..size).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
        q[(i, i)] = -row_sum;
    }
    build_chain(q, "random-reversible").expect("reversible generator is valid")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Transition matrices are stochastic: entries nonnegative up to
    /// rounding, rows summing to one.
    #[test]
    fn transition_matrix_is_stochastic(seed in 0u64..1_000_000, size in 3usize..=6, t in 0.0f64..50.0) {
        let chain = random_chain(seed, size);
        let p = chain.transition_matrix(t).expect("transition matrix");
        for i in 0..size {
            let mut row_sum = 0.0;
            for j in 0..size {
                prop_assert!(p[(i, j)] >= -1e-15, "P[{}][{}]({}) = {} below zero", i, j, t, p[(i, j)]);
                row_sum += p[(i, j)];
            }
            prop_assert!((row_sum - 1.0).abs() < 1e-12, "row {} sums to {} at t = {}", i, row_sum, t);
        }
    }

    /// Chapman-Kolmogorov: `P(s) P(t) = P(s + t)`.
    #[test]
    fn transition_semigroup_property(seed in 0u64..1_000_000, size in 3usize..=6, s in 0.01f64..10.0, t in 0.01f64..10.0) {
        let chain = random_chain(seed, size);
        let ps = chain.transition_matrix(s).expect("P(s)");
        let pt = chain.transition_matrix(t).expect("P(t)");
        let pst = chain.transition_matrix(s + t).expect("P(s+t)");
        let prod = &ps * &pt;
        for i in 0..size {
            for j in 0..size {
                prop_assert!(
                    (prod[(i, j)] - pst[(i, j)]).abs() < 1e-8,
                    "semigroup gap {} at ({}, {}), s = {}, t = {}",
                    (prod[(i, j)] - pst[(i, j)]).abs(), i, j, s, t
                );
            }
        }
    }

    /// The stationary law is invariant under every transition matrix.
    #[test]
    fn stationary_law_is_invariant(seed in 0u64..1_000_000, size in 3usize..=6, t in 0.01f64..50.0) {
        let chain = random_chain(seed, size);
        let pi = DVector::from_fn(size, |i, _| chain.pi()[i]);
        let moved = chain.propagate_distribution(&pi, t);
        for i in 0..size {
            prop_assert!(
                (moved[i] - pi[i]).abs() < 1e-9,
                "pi drifted by {} in coordinate {} at t = {}",
                (moved[i] - pi[i]).abs(), i, t
            );
        }
    }

    /// On reversible chains the spectral and uniformized transition
    /// probabilities agree to near machine precision.
    #[test]
    fn spectral_matches_uniformization(seed in 0u64..1_000_000, size in 3usize..=6, t in 0.01f64..30.0) {
        let chain = random_reversible_chain(seed, size);
        prop_assert!(chain.reversible(), "construction guarantees detailed balance");
        let sd = spectral_decomposition(&chain).expect("spectral decomposition");
        let p = chain.transition_matrix(t).expect("uniformized matrix");
        for i in 0..size {
            for j in 0..size {
                prop_assert!(
                    (sd.transition_prob(i, j, t) - p[(i, j)]).abs() < 1e-10,
                    "spectral vs series gap {} at ({}, {}), t = {}",
                    (sd.transition_prob(i, j, t) - p[(i, j)]).abs(), i, j, t
                );
            }
        }
    }

    /// Breaking one detailed-balance pair makes the chain non-reversible.
    #[test]
    fn reversibility_detection(seed in 0u64..1_000_000, size in 3usize..=6) {
        let chain = random_reversible_chain(seed, size);
        prop_assert!(chain.reversible(), "symmetric-conductance chain must be reversible");
        let mut q = DMatrix::zeros(size, size);
        for i in 0..size {
            for j in 0..size {
                q[(i, j)] = chain.rate(i, j);
            }
        }
        q[(0, 1)] *= 3.0;
        q[(0, 0)] -= 2.0 * chain.rate(0, 1);
        let perturbed = build_chain(q, "perturbed").expect("perturbed generator still valid");
        prop_assert!(!perturbed.reversible(), "scaled (0,1) rate must break detailed balance");
    }

    /// At each MAP switching point the two competing posteriors cross, so
    /// their gap is tiny at the refined point.
    #[test]
    fn map_switching_points_are_crossings(seed in 0u64..1_000_000, size in 3usize..=5) {
        let chain = random_chain(seed, size);
        let horizon = 30.0 * chain.mean_sojourn();
        let map = ctmc_freshness::map_structure(&chain, horizon, horizon / 1000.0).expect("map structure");
        for i in 0..size {
            for (k, &t) in map.points[i].iter().enumerate() {
                let before = map.values[i][k];
                let after = map.values[i][k + 1];
                let row = chain.transition_row(i, t).expect("transition row");
                prop_assert!(
                    (row[before] - row[after]).abs() < 1e-6,
                    "state {}: posteriors {} and {} differ by {} at switching point {}",
                    i, before, after, (row[before] - row[after]).abs(), t
                );
            }
        }
    }
}

#[test]
fn map_estimate_agrees_with_structure_on_presets() {
    let data = reference();
    for name in PRESET_NAMES {
        let chain = preset_chain(name).expect("preset builds");
        let map = default_map_structure(&chain).expect("map structure");
        let horizon = num(data, &format!("presets/{name}/map_horizon"));
        for i in 0..chain.size() {
            for step in 0..40 {
                let t = horizon * (step as f64 + 0.31) / 40.0;
                let from_structure = map.value_at(i, t);
                let direct = ctmc_freshness::map_estimate(&chain, i, t).expect("map estimate");
                let row = chain.transition_row(i, t).expect("row");
                assert!(
                    (row[from_structure] - row[direct]).abs() < 1e-9,
                    "{name}: stage table value {from_structure} and direct argmax {direct} \
                     have posterior gap {:.3e} at (state {i}, age {t})",
                    (row[from_structure] - row[direct]).abs()
                );
            }
        }
    }
}

