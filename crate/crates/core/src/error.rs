use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("missing mask for image stem `{0}`")]
    MissingMask(String),

    #[error("missing image for mask stem `{0}`")]
    MissingImage(String),

    #[error("non-finite loss at iteration {iteration} (batch ids: {ids:?})")]
    NonFinite { iteration: usize, ids: Vec<String> },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
