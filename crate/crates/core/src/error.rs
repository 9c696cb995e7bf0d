use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, WattError>;

#[derive(Debug, Error)]
pub enum WattError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("non-finite loss {value} at step {step} ({context})")]
    NonFinite { value: f64, step: usize, context: String },

    #[error("character {ch:?} in prompt {prompt:?} is outside the text vocabulary")]
    Vocabulary { ch: char, prompt: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("model config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(
        "pretraining reached zero-shot accuracy {accuracy:.4} after {epochs} epochs, below the \
         required {threshold:.2}; increase `epochs` or `lr` in the pretrain config"
    )]
    PretrainGate {
        accuracy: f64,
        threshold: f64,
        epochs: usize,
    },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl WattError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        WattError::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        WattError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
