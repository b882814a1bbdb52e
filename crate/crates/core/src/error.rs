//! Crate-wide error type with stable machine-parseable codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Error, Debug)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A metric is mathematically undefined on this input (e.g. RPA with no
    /// voiced reference frames).
    #[error("undefined result: {0}")]
    UndefinedResult(String),

    #[error("scene sampling failed: {0}")]
    SceneSampling(String),

    #[error("checkpoint/config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("manifest error at line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("wav error: {0}")]
    Wav(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }

    /// Stable one-word code for CLI exit reporting.
    pub fn code(&self) -> &'static str {
        match self {
            CoreError::InvalidArgument(_) => "invalid-argument",
            CoreError::UndefinedResult(_) => "undefined-result",
            CoreError::SceneSampling(_) => "scene-sampling",
            CoreError::ConfigMismatch(_) => "config-mismatch",
            CoreError::Manifest { .. } => "manifest",
            CoreError::Wav(_) => "wav",
            CoreError::Io(_) => "io",
            CoreError::Json(_) => "json",
        }
    }
}

impl From<hound::Error> for CoreError {
    fn from(e: hound::Error) -> Self {
        CoreError::Wav(e.to_string())
    }
}
