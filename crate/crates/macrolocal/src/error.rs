use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An input had the wrong dimensions for the operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A probability table failed a structural constraint badly enough
    /// that the requested operation is meaningless.
    #[error("invalid behavior: {0}")]
    Validation(String),

    /// Marginals were requested from a table whose signaling residual
    /// exceeds the stated tolerance.
    #[error("inconsistent marginals: signaling residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    InconsistentMarginals { residual: f64, tolerance: f64 },

    /// Deterministic-vertex enumeration would exceed the configured cap.
    #[error("enumeration too large: {total} deterministic assignments exceed cap {cap}")]
    EnumerationTooLarge { total: u128, cap: u128 },

    /// A text input could not be parsed; `line` is 1-based.
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    /// A numeric argument was outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two inputs that must describe the same object disagree.
    #[error("inconsistent input: {0}")]
    Consistency(String),

    /// An internal numerical contract was violated (e.g. a non-symmetric
    /// matrix handed to the symmetric eigensolver).
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(line: usize, msg: impl Into<String>) -> Self {
        Error::Format { line, message: msg.into() }
    }
}
