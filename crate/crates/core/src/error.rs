use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image encoding: {0}")]
    Format(String),

    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("halo layers have different light centers: {0}")]
    CenterMismatch(String),

    #[error("invalid halo parameters: {0}")]
    Param(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("no usable images found in {0}")]
    EmptyDataset(PathBuf),

    #[error("missing predictions for: {}", .0.join(", "))]
    MissingPrediction(Vec<String>),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
