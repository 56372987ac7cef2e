use thiserror::Error;

/// Errors produced anywhere in the failure-model pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid campaign: {0}")]
    Campaign(String),

    #[error("campaign has no failing shot, so the damage normalizer is undefined; supply it explicitly (e.g. --normalizer-kv)")]
    NoFailures,

    #[error("unknown device `{0}`")]
    UnknownDevice(String),

    #[error("invalid SME anchors: {0}")]
    Anchors(String),

    #[error("invalid hierarchy configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible: {reason} ({accepted} accepted of {attempts} attempts)")]
    Infeasible {
        reason: String,
        accepted: usize,
        attempts: usize,
    },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("inference failed: {0}")]
    Inference(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
