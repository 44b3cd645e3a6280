use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("negative extent {0} in tensor shape")]
    NegativeExtent(i64),

    #[error("conv2d: kernel {kernel} exceeds padded input {size} + 2*{pad}")]
    ConvGeometry {
        size: usize,
        kernel: usize,
        pad: usize,
    },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("variable belongs to a different tape")]
    ForeignNode,

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("batchnorm: train mode needs at least 2 elements per channel, got {0}")]
    BatchTooSmall(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("colour sampler exhausted {0} draws without landing inside (0, 1)")]
    SamplerExhausted(usize),

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI: 2 usage, 3 IO/format, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::NonFinite(_) | Error::SamplerExhausted(_) => 4,
            Error::Config(_) | Error::NegativeExtent(_) => 2,
            _ => 1,
        }
    }
}
