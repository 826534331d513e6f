use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("{op}: input outside the domain ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("tensor is not recorded on this tape")]
    DetachedTensor,

    #[error("cholesky factorization failed (matrix not positive definite, max jitter {jitter:e})")]
    Cholesky { jitter: f64 },

    #[error("kl divergence is not implemented between {0} and {1}")]
    UnsupportedKl(&'static str, &'static str),

    #[error("value {value} is outside the support of {distribution}")]
    OutsideSupport {
        distribution: &'static str,
        value: f64,
    },

    #[error("invalid distribution parameter: {0}")]
    InvalidParameter(String),

    #[error("{0} has no cumulative distribution function")]
    NoCdf(&'static str),

    #[error("layer `{0}` does not implement reverse")]
    NotReversible(String),

    #[error("layer `{0}` does not implement log_det_jacobian")]
    MissingLogDet(String),

    #[error("layer {index} (`{name}`): {source}")]
    Layer {
        index: usize,
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("column `{name}` not found; available columns: {available:?}")]
    MissingColumn { name: String, available: Vec<String> },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid_shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn in_layer(self, index: usize, name: &str) -> Self {
        Error::Layer {
            index,
            name: name.to_string(),
            source: Box::new(self),
        }
    }
}
