//! Crate-wide error type.

use alloc::string::String;

/// Errors produced by model construction and numerical routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A parameter violated its documented bounds.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An argument was outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector/matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    /// Adaptive quadrature exhausted its subdivision budget. The last
    /// estimate and its error bound are carried for diagnostics.
    #[error("quadrature did not converge: estimate {estimate}, error bound {error_bound}")]
    QuadratureNonConvergence { estimate: f64, error_bound: f64 },

    /// Root bracketing failed even after automatic expansion.
    #[error("bracketing failed: {0}")]
    BracketFailure(String),

    /// The factor variance does not exist (e.g. Pareto with shape <= 2).
    #[error("factor variance undefined: {0}")]
    UnsupportedVariance(String),

    /// A closed-form path was requested for a factor family without one.
    #[error("closed form unavailable for this factor family: {0}")]
    WrongFactorFamily(String),

    /// A uniform observation sat exactly on 0 or 1. Boundary uniforms are
    /// rejected rather than clipped: clipping corrupts tail inference.
    #[error("uniform value {0} is outside the open interval (0,1)")]
    BoundaryUniform(f64),

    /// Data contained NaN or infinities where finite values are required.
    #[error("non-finite input: {0}")]
    NonFinite(String),
}

pub type Result<T> = core::result::Result<T, Error>;
