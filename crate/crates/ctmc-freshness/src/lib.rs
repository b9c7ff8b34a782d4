//! Mean binary freshness of query-based remote estimation for finite CTMCs.
//!
//! A monitor samples an irreducible continuous-time Markov chain `X(t)` with
//! generator `Q` at query times forming a Poisson process, and maintains an
//! estimate `Xhat(t)` from the most recent sample and its age. Binary
//! freshness is the indicator `1{X(t) = Xhat(t)}`; the mean binary freshness
//! (MBF) is its long-run time average. This crate provides:
//!
//! - validated chain construction, stationary analysis, uniformized
//!   transition matrices, spectral decompositions of reversible chains, and
//!   the piecewise-constant structure of the MAP estimate ([`chain`],
//!   [`spectral`], [`map`]);
//! - the five structured estimators (martingale, exponential, Erlang,
//!   threshold MAP, piecewise MAP) and their schedules ([`estimators`]);
//! - closed-form MBF under a fixed sampling rate for each estimator, plus the
//!   generic renewal-reward path through expected fresh times ([`freshness`]);
//! - state-dependent sampling analytics: the joint (source, estimate) chain,
//!   per-state-rate MBF, average sampling rate, and semi-simple-policy
//!   metrics ([`statedep`]);
//! - optimal state-dependent sampling under an average-rate budget via
//!   semi-Markov decision process policy iteration and a Lagrangian
//!   bisection ([`smdp`]);
//! - budgeted rate allocation across several independently monitored chains
//!   ([`multisource`]);
//! - an event-driven Monte Carlo simulator used as an empirical
//!   cross-check of every closed form ([`sim`]);
//! - bundled example generators, a structured config format, and a CLI
//!   ([`presets`], [`config`], binary `mbf`).
//!
//! All numerical routines are pure functions of immutable inputs and are safe
//! to call concurrently.

pub mod chain;
pub mod config;
pub mod error;
pub mod estimators;
pub mod freshness;
pub mod map;
pub mod multisource;
pub mod presets;
mod quad;
pub mod sim;
pub mod smdp;
pub mod spectral;
pub mod statedep;

pub use chain::{build_chain, transition_matrix, Chain};
pub use error::{Error, Result};
pub use estimators::{
    evaluate_estimate, pmap_from_map, pmap_from_map_truncated, pmap_schedule, EstimatorSpec,
    PMapSchedule,
};
pub use freshness::{
    expected_fresh_time, mbf_closed, mbf_erlang, mbf_exponential, mbf_general, mbf_martingale,
    mbf_pmap, mbf_report, mbf_tau_map, verify_martingale_vs_taustar, FreshnessReport, MbfMethod,
};
pub use map::{map_estimate, map_structure, MapStructure};
pub use multisource::{
    lagrangian_bisection, per_source_maximizer, projected_gradient_descent, Allocation, Source,
    SourceSet,
};
pub use presets::{default_map_grid, default_map_structure, preset_chain, PRESET_NAMES};
pub use sim::{
    empirical_sweep, occupancy, simulate, simulate_traced, SimConfig, SimResult, TraceEvent,
    TraceEventKind,
};
pub use smdp::{
    absorption_probs, default_rate_grid, policy_iteration, solve_constrained, PolicySolution,
    SmdpInstance,
};
pub use spectral::{spectral_decomposition, SpectralDecomposition};
pub use statedep::{
    build_joint_generator, joint_stationary, mbf_statedep, ssp_metrics, JointStationary,
    SamplingPolicy,
};
