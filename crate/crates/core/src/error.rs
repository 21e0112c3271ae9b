use thiserror::Error;

/// Errors raised by the library. Each variant maps to one class of contract
/// violation so callers (notably the CLI) can decide on exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("value out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid increment law: {0}")]
    InvalidLaw(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("not a transition kernel: {0}")]
    NotTransitionKernel(String),

    #[error("eigenvalues do not define a valid count-chain kernel: {0}")]
    InvalidKappa(String),

    #[error("reversibility required: {0}")]
    Reversibility(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("logarithmic singularity: {0}")]
    LogSingularity(String),
}

pub type Result<T> = std::result::Result<T, Error>;
