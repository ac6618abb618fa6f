use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sketch")]
    EmptySketch,
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported path command '{0}'")]
    UnsupportedCommand(char),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no strokes remain")]
    NoStrokesRemain,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown shape class '{0}'")]
    UnknownClass(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
