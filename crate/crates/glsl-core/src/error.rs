use thiserror::Error;

#[derive(Debug, Error)]
pub enum GlslError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {msg}")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        msg: String,
    },

    #[error("{op}: non-finite value encountered ({msg})")]
    NonFinite { op: &'static str, msg: String },

    #[error("log of non-positive value {value}")]
    LogDomain { value: f64 },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("{0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("injection: {0}")]
    Injection(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GlslError>;
