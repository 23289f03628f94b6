//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two operands do not compose.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    /// A NaN or infinity was produced or supplied where finite values are required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A linear system could not be solved even after regularization.
    #[error("singular system in {context}")]
    Singular { context: String },

    /// LLE local Gram solve failed for a specific sample.
    #[error("singular local Gram for sample {sample} (even after regularization)")]
    SingularSample { sample: usize },

    /// A constraint parameter is outside its valid range.
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),

    /// A batch is too small or otherwise unusable for the requested operation.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// Pairwise weighting was requested for a loss that does not decompose into pairs.
    #[error("unsupported decomposition: {0}")]
    UnsupportedDecomposition(String),

    /// Experiment configuration failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A data file could not be parsed.
    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
