use std::path::PathBuf;

/// Errors produced by the label-proportion toolkit.
#[derive(Debug, thiserror::Error)]
pub enum LlpError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("support of {size} outcomes exceeds the enumeration cap of {cap}")]
    Capacity { size: u128, cap: usize },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("cannot normalize weights: every raw weight in the batch is zero")]
    DegenerateWeights,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid proportion vector: {0}")]
    InvalidProportion(String),

    #[error("malformed {what} in {path}: {reason}")]
    Format {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LlpError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        LlpError::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = LlpError> = std::result::Result<T, E>;
