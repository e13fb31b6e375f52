use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("attention mask leaves query row {row} without any unmasked key")]
    Mask { row: usize },

    #[error("scene {0} has no triplets")]
    EmptyScene(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid box ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("label {id} out of range for vocabulary of size {size}")]
    LabelOutOfRange { id: usize, size: usize },

    #[error("gradient verification failed: {0}")]
    Verification(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64, trace: Vec<f64> },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
