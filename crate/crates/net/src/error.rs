use thiserror::Error;

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Core(#[from] xgen_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty shape: {0}")]
    EmptyShape(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
}
