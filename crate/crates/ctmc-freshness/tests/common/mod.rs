//! Shared access to the frozen reference values used across the integration
//! suite. The JSON file pins chain facts, closed-form MBF tables, optimizer
//! outputs, and Monte Carlo summaries that the tests compare against.

#![allow(dead_code)]

use ctmc_freshness::{build_chain, Chain};
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use std::sync::OnceLock;

/// Parsed reference tree, loaded once per test binary.
pub fn reference() -> &'static Value {
    static DATA: OnceLock<Value> = OnceLock::new();
    DATA.get_or_init(|| {
        serde_json::from_str(include_str!("../data/reference_values.json"))
            .expect("reference_values.json parses")
    })
}

/// Walk a `/`-separated path of object keys and array indices.
pub fn node<'a>(root: &'a Value, path: &str) -> &'a Value {
    let mut cur = root;
    for part in path.split('/') {
        cur = match cur {
            Value::Object(map) => map
                .get(part)
                .unwrap_or_else(|| panic!("missing key '{part}' while walking '{path}'")),
            Value::Array(arr) => {
                let k: usize = part
                    .parse()
                    .unwrap_or_else(|_| panic!("'{part}' is not an index while walking '{path}'"));
                arr.get(k)
                    .unwrap_or_else(|| panic!("index {k} out of bounds while walking '{path}'"))
            }
            other => panic!("cannot descend into {other} at '{part}' of '{path}'"),
        };
    }
    cur
}

/// Scalar float at `path`.
pub fn num(root: &Value, path: &str) -> f64 {
    node(root, path)
        .as_f64()
        .unwrap_or_else(|| panic!("'{path}' is not a number"))
}

/// Scalar integer at `path`.
pub fn int(root: &Value, path: &str) -> usize {
    node(root, path)
        .as_u64()
        .unwrap_or_else(|| panic!("'{path}' is not an integer")) as usize
}

/// Scalar bool at `path`.
pub fn flag(root: &Value, path: &str) -> bool {
    node(root, path)
        .as_bool()
        .unwrap_or_else(|| panic!("'{path}' is not a bool"))
}

/// Float list at `path`.
pub fn nums(root: &Value, path: &str) -> Vec<f64> {
    node(root, path)
        .as_array()
        .unwrap_or_else(|| panic!("'{path}' is not an array"))
        .iter()
        .map(|v| v.as_f64().unwrap_or_else(|| panic!("'{path}' has a non-number entry")))
        .collect()
}

/// List of float lists at `path` (ragged allowed).
pub fn num_lists(root: &Value, path: &str) -> Vec<Vec<f64>> {
    node(root, path)
        .as_array()
        .unwrap_or_else(|| panic!("'{path}' is not an array"))
        .iter()
        .enumerate()
        .map(|(k, row)| {
            row.as_array()
                .unwrap_or_else(|| panic!("'{path}'[{k}] is not an array"))
                .iter()
                .map(|v| v.as_f64().unwrap_or_else(|| panic!("'{path}'[{k}] has a non-number")))
                .collect()
        })
        .collect()
}

/// List of index lists at `path` (ragged allowed).
pub fn index_lists(root: &Value, path: &str) -> Vec<Vec<usize>> {
    num_lists(root, path)
        .into_iter()
        .map(|row| row.into_iter().map(|v| v as usize).collect())
        .collect()
}

/// Dense square matrix from the nested lists at `path`.
pub fn matrix(root: &Value, path: &str) -> DMatrix<f64> {
    let rows = num_lists(root, path);
    let n = rows.len();
    assert!(rows.iter().all(|r| r.len() == n), "'{path}' is not square");
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Chain built from the generator stored at `path`.
pub fn chain_at(root: &Value, path: &str, label: &str) -> Chain {
    build_chain(matrix(root, path), label).unwrap_or_else(|e| panic!("chain at '{path}': {e}"))
}

/// Assert two floats agree within an absolute tolerance, with context.
pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{what}: got {actual:.17e}, expected {expected:.17e} (|diff| = {:.3e} > {tol:.1e})",
        (actual - expected).abs()
    );
}

/// Fully connected random generator with off-diagonal rates in
/// `[0.05, 1.05)`; always irreducible.
pub fn random_chain(seed: u64, size: usize) -> Chain {
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
pub fn random_reversible_chain(seed: u64, size: usize) -> Chain {
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
