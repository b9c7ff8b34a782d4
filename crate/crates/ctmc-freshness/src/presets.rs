//! Bundled benchmark chains, addressable by name from the CLI and tests.
//!
//! `fig4` is a dense 4-state chain, `fig5` a 5-state star, `fig6a`..`fig6d`
//! and `fig9` are birth-death chains of 4 to 6 states, and `ring4` is a
//! unidirectional 4-cycle with one shortcut back edge. The star and
//! birth-death chains are reversible; `fig4` and `ring4` are not.
//!
//! Each preset also carries a default scan window for locating its MAP
//! switching structure: reversible chains scan 30 relaxation times of the
//! slowest decay mode in 2000 steps, while the two non-reversible presets
//! use fixed windows wide enough to contain their last switching points
//! (`ring4` needs the finer 0.01 step to separate late crossings).

use nalgebra::DMatrix;

use crate::chain::{build_chain, Chain};
use crate::error::{Error, Result};
use crate::map::{map_structure, MapStructure};
use crate::spectral::spectral_decomposition;

/// Names accepted by [`preset_chain`], in canonical order.
pub const PRESET_NAMES: [&str; 8] = [
    "fig4", "fig5", "fig6a", "fig6b", "fig6c", "fig6d", "fig9", "ring4",
];

/// Build a bundled chain by name; the chain label is the preset name.
pub fn preset_chain(name: &str) -> Result<Chain> {
    let (s, entries): (usize, Vec<f64>) = match name {
        "fig4" => (
            4,
            vec![
                -1.7, 0.41, 0.53, 0.76, 1.03, -2.17, 0.83, 0.31, 1.11, 0.78, -2.74, 0.85, 1.15,
                1.13, 0.71, -2.99,
            ],
        ),
        "fig5" => (
            5,
            vec![
                -3.99, 0.77, 0.69, 1.29, 1.24, 0.7, -0.7, 0.0, 0.0, 0.0, 0.84, 0.0, -0.84, 0.0,
                0.0, 0.71, 0.0, 0.0, -0.71, 0.0, 0.48, 0.0, 0.0, 0.0, -0.48,
            ],
        ),
        "fig6a" => (
            4,
            vec![
                -0.79, 0.79, 0.0, 0.0, 1.71, -1.97, 0.26, 0.0, 0.0, 1.08, -2.73, 1.65, 0.0, 0.0,
                0.62, -0.62,
            ],
        ),
        "fig6b" => (
            6,
            vec![
                -0.62, 0.62, 0.0, 0.0, 0.0, 0.0, 0.63, -1.58, 0.95, 0.0, 0.0, 0.0, 0.0, 1.748,
                -3.558, 1.81, 0.0, 0.0, 0.0, 0.0, 0.47, -2.22, 1.75, 0.0, 0.0, 0.0, 0.0, 1.15,
                -1.88, 0.73, 0.0, 0.0, 0.0, 0.0, 1.91, -1.91,
            ],
        ),
        "fig6c" => (
            4,
            vec![
                -2.41, 1.25, 0.5, 0.66, 0.36, -0.36, 0.0, 0.0, 1.2, 0.0, -1.2, 0.0, 1.18, 0.0,
                0.0, -1.18,
            ],
        ),
        "fig6d" => (
            6,
            vec![
                -4.83, 1.24, 0.83, 1.25, 0.88, 0.63, 1.08, -1.08, 0.0, 0.0, 0.0, 0.0, 0.31, 0.0,
                -0.31, 0.0, 0.0, 0.0, 0.99, 0.0, 0.0, -0.99, 0.0, 0.0, 1.01, 0.0, 0.0, 0.0,
                -1.01, 0.0, 1.17, 0.0, 0.0, 0.0, 0.0, -1.17,
            ],
        ),
        "fig9" => (
            4,
            vec![
                -1.02, 1.02, 0.0, 0.0, 1.05, -2.21, 1.16, 0.0, 0.0, 0.61, -2.18, 1.57, 0.0, 0.0,
                0.26, -0.26,
            ],
        ),
        "ring4" => (
            4,
            vec![
                -1.0, 1.0, 0.0, 0.0, 0.0, -0.75, 0.75, 0.0, 0.0, 0.0, -1.0, 1.0, 0.75, 0.0, 0.0,
                -0.75,
            ],
        ),
        other => {
            return Err(Error::ParseError(format!(
                "unknown preset '{other}'; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    build_chain(DMatrix::from_row_slice(s, s, &entries), name)
}

/// Default `(horizon, grid_step)` for scanning a chain's MAP switching
/// points: fixed windows for the two non-reversible presets, 30 slowest
/// relaxation times otherwise, with a 2000-step grid (4000 for `ring4`).
pub fn default_map_grid(chain: &Chain) -> Result<(f64, f64)> {
    match chain.label() {
        "fig4" => Ok((20.0, 20.0 / 2000.0)),
        "ring4" => Ok((40.0, 0.01)),
        _ => {
            let horizon = if chain.reversible() {
                30.0 / spectral_decomposition(chain)?.spectral_gap()
            } else {
                30.0 * chain.mean_sojourn()
            };
            Ok((horizon, horizon / 2000.0))
        }
    }
}

/// MAP switching structure of a chain under its default scan window.
pub fn default_map_structure(chain: &Chain) -> Result<MapStructure> {
    let (horizon, step) = default_map_grid(chain)?;
    map_structure(chain, horizon, step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_build() {
        for name in PRESET_NAMES {
            let c = preset_chain(name).unwrap();
            assert_eq!(c.label(), name);
            assert!(c.size() >= 4, "presets have at least 4 states");
        }
    }

    #[test]
    fn reversibility_flags() {
        for (name, rev) in [
            ("fig4", false),
            ("fig5", true),
            ("fig6a", true),
            ("fig6b", true),
            ("fig6c", true),
            ("fig6d", true),
            ("fig9", true),
            ("ring4", false),
        ] {
            assert_eq!(
                preset_chain(name).unwrap().reversible(),
                rev,
                "reversibility of preset {name}"
            );
        }
    }

    #[test]
    fn unknown_preset_is_a_parse_error() {
        assert!(matches!(preset_chain("fig7"), Err(Error::ParseError(_))));
    }
}
