use thiserror::Error;

/// Errors surfaced by validated constructors and operations.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two values that must share a dimension did not.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// An input is degenerate for the requested operation (e.g. a zero
    /// vector where an angle is needed).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The operation has no closed form or is excluded for this system family.
    #[error("unsupported operation: {0}")]
    UnsupportedOperation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
