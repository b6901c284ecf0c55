// SPDX-License-Identifier: MIT OR Apache-2.0

//! Library-wide error type.

use thiserror::Error;

/// Errors raised by tensor algebra, basis construction, the solver and the sampler.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands have incompatible dimensions, mode sizes or ranks.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A dense representation would exceed the size guard.
    #[error("dense size {size} exceeds the limit of {limit} entries")]
    SizeGuard { size: usize, limit: usize },

    /// An argument violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A polynomial degree beyond the monomial-transform conditioning cap was requested.
    #[error("polynomial degree {degree} exceeds the conditioning cap {cap}")]
    DegreeCap { degree: usize, cap: usize },

    /// A value became NaN or infinite.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// The adaptive step size collapsed below the admissible minimum.
    #[error("step size underflow at t = {t}: tau = {tau:e}")]
    StepUnderflow { t: f64, tau: f64 },

    /// The retraction criterion cannot be met even for vanishing step sizes.
    #[error("rank budget too small at t = {t}: retraction error {rel_err:e} at tau = {tau:e}")]
    RankBudget { t: f64, tau: f64, rel_err: f64 },

    /// Too many sampler particles diverged.
    #[error("{flagged} of {total} particles became non-finite")]
    SamplerAbort { flagged: usize, total: usize },

    /// A binary or JSON artifact is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
