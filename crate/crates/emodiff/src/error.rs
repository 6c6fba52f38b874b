//! Error type shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum EmodiffError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown word: {0:?}")]
    UnknownWord(String),

    #[error("training failed: {0}")]
    TrainingFailure(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid emotion wheel: {0}")]
    InvalidWheel(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EmodiffError>;
