//! Error type shared by every module of the crate.
//!
//! Variants are grouped by the stage that raises them: chain construction,
//! transition-matrix evaluation, estimator handling, joint-chain and solver
//! numerics, and configuration parsing. All variants carry a human-readable
//! diagnostic string.

use thiserror::Error;

/// Crate-wide error enumeration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A generator row does not sum to zero within tolerance.
    #[error("generator row sum violation: {0}")]
    RowSumViolation(String),
    /// An off-diagonal generator entry is negative.
    #[error("negative off-diagonal rate: {0}")]
    NegativeOffDiagonal(String),
    /// The off-diagonal support graph is not strongly connected.
    #[error("chain is not irreducible: {0}")]
    NotIrreducible(String),
    /// A transition-matrix evaluation time is negative.
    #[error("negative time: {0}")]
    NegativeTime(String),
    /// A reversible-only operation was invoked on a non-reversible chain.
    #[error("chain is not reversible: {0}")]
    NotReversible(String),
    /// The resolvent solve `(cI - Q^T) x = b` broke down numerically.
    #[error("singular resolvent: {0}")]
    SingularResolvent(String),
    /// A per-state threshold list is not nondecreasing or malformed.
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    /// A randomized estimator was evaluated without its auxiliary stage.
    #[error("missing auxiliary stage: {0}")]
    MissingAuxStage(String),
    /// A deterministic-only operation received a randomized estimator.
    #[error("randomized estimator unsupported here: {0}")]
    RandomizedEstimatorUnsupported(String),
    /// A sampling rate is zero or negative.
    #[error("nonpositive rate: {0}")]
    NonpositiveRate(String),
    /// The joint-chain stationary system could not be solved.
    #[error("singular joint system: {0}")]
    SingularSystem(String),
    /// An absorption-probability solve broke down numerically.
    #[error("singular absorption solve: {0}")]
    SingularSolve(String),
    /// Policy iteration failed to converge within its iteration cap.
    #[error("policy iteration exceeded max iterations: {0}")]
    MaxIterationsExceeded(String),
    /// The multiplier bracket could not be established.
    #[error("bracketing failure: {0}")]
    BracketingFailure(String),
    /// Box bounds are incompatible with the budget constraint.
    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),
    /// A configuration file or flag could not be parsed.
    #[error("parse error: {0}")]
    ParseError(String),
    /// The stationary distribution has no unique maximizer.
    #[error("no unique stationary maximum: {0}")]
    NoUniqueMaximum(String),
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
