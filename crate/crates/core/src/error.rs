use thiserror::Error;

/// Errors produced by oracles, solvers and run drivers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// The normalized step is undefined for a zero gradient.
    #[error("degenerate gradient: gradient norm is zero")]
    DegenerateGradient,

    /// The 2-D metric is singular (gradient and momentum are parallel).
    #[error("degenerate subspace: {0}")]
    DegenerateSubspace(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> Error {
    Error::NumericFailure(msg.into())
}
