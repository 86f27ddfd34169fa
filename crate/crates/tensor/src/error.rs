use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected a scalar, got shape {0:?}")]
    NonScalar((usize, usize)),
    #[error("data length {len} does not match shape {shape:?}")]
    BadLength { len: usize, shape: (usize, usize) },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("unsupported layer: {0}")]
    UnsupportedLayer(String),
    #[error("parameter set mismatch: {0}")]
    ParamMismatch(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
