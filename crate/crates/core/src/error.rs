use std::path::PathBuf;

use ecgan_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("role mismatch: expected {expected}, found {found}")]
    RoleMismatch { expected: String, found: String },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("training diverged at step {step}: {what} is not finite")]
    Diverged { step: u64, what: &'static str },

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an I/O error with what was being attempted.
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

/// Dataset loading and preparation failures. Format errors carry the file
/// and byte offset of the offending field.
#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("{file}: bad magic number {found:#010x} at byte 0 (expected {expected:#010x})")]
    BadMagic { file: String, expected: u32, found: u32 },

    #[error("{file}: truncated at byte {offset}: {needed} more bytes expected")]
    Truncated { file: String, offset: u64, needed: u64 },

    #[error("{file}: {extra} unexpected trailing bytes at byte {offset}")]
    TrailingBytes { file: String, offset: u64, extra: u64 },

    #[error("{file}: invalid header at byte {offset}: {reason}")]
    InvalidHeader { file: String, offset: u64, reason: String },

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("labels.csv row {row}: {reason}")]
    BadRow { row: usize, reason: String },

    #[error("labels.csv row {row}: image file {path} not found")]
    MissingFile { row: usize, path: String },

    #[error("labels.csv row {row}: unknown label {label:?}")]
    UnknownLabel { row: usize, label: String },

    #[error("subsample: class {class} has {available} samples, {percent}% rounds to 0")]
    Underflow { class: usize, available: usize, percent: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("dataset is empty")]
    Empty,
}
