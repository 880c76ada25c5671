use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: String, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("optimizer step refused: {0}")]
    OptimizerRefused(String),
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("malformed input at line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("missing annotation for image {0}")]
    MissingAnnotation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
