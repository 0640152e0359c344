use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid distribution parameters: {0}")]
    InvalidDistribution(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("dtype mismatch in {}: expected f64, found `{found}`", path.display())]
    DtypeMismatch { path: PathBuf, found: String },

    #[error("shape mismatch in {}: {reason}", path.display())]
    FileShapeMismatch { path: PathBuf, reason: String },

    #[error("malformed file {}: {reason}", path.display())]
    Malformed { path: PathBuf, reason: String },

    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("skeleton has no flip pairs")]
    MissingFlipPairs,

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("non-finite loss at step {step} (epoch {epoch}): {value}")]
    NonFiniteLoss { step: usize, epoch: usize, value: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

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
