use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument or configuration value is out of range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The data itself is unusable (empty bags, duplicate ids, unlabeled bags, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("training set contains a single class: {0}")]
    SingleClass(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("ground-truth tie for video `{0}`")]
    VideoLabelTie(String),

    /// An input artifact was produced under a different configuration.
    #[error("stale artifact {0}")]
    StaleArtifact(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the failure stems from the input data rather than from the
    /// arguments used to process it.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidData(_)
                | Error::SingleClass(_)
                | Error::VideoLabelTie(_)
                | Error::Format(_)
                | Error::Io(_)
                | Error::Image(_)
                | Error::Json(_)
                | Error::NotPositiveDefinite(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_arg(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn invalid_data(msg: impl Into<String>) -> Error {
    Error::InvalidData(msg.into())
}
