use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode raster: {message}")]
    Raster { path: PathBuf, message: String },

    #[error("{source_id}: row {row}: {message}")]
    MalformedRow {
        source_id: String,
        row: usize,
        message: String,
    },

    #[error("unknown label code {0:?}")]
    UnknownLabel(String),

    #[error("{source_id}: row {row}: unknown label code {code:?}")]
    UnknownLabelInRow {
        source_id: String,
        row: usize,
        code: String,
    },

    #[error("{source_id}: duplicate image path {path:?} at row {row}")]
    DuplicateImage {
        source_id: String,
        row: usize,
        path: String,
    },

    #[error("mask value {value} is not binary (expected 0 or 255)")]
    NonBinaryMask { value: u16 },

    #[error("{0}: expected a single-channel raster")]
    NotSingleChannel(PathBuf),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kgml mode requires a spatial mask: {0}")]
    MissingMask(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("report: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
