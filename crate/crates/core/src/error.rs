use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("eigensolver failed to converge on a {dim}x{dim} matrix (residual {residual:.3e})")]
    EigenConvergence { dim: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("word budget exceeded: {count} words requested, budget is {budget}")]
    BudgetExceeded { count: u64, budget: u64 },

    #[error("unsupported word: {0}")]
    UnsupportedWord(String),

    #[error("step size too large: unitarity residual {residual:.3e} at t = {time}")]
    StepSize { residual: f64, time: f64 },

    #[error("exact mode supports at most {limit} points, got {got}; use greedy mode")]
    ExactLimit { limit: usize, got: usize },

    #[error("subset is not saturated by the subgroup")]
    NotSaturated,

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
