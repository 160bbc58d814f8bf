//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("{what} is not a probability simplex (sums to {sum})")]
    NonSimplex { what: String, sum: f64 },

    #[error("{what}: label {label} out of range [0, {limit})")]
    LabelOutOfRange {
        what: String,
        label: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("instance is missing {0} labels")]
    MissingLabels(&'static str),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset file is missing its header record")]
    MissingHeader,

    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
