use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("observation outside model support: {0}")]
    Domain(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("non-finite belief at step {step}: {detail}")]
    NumericFailure { step: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
