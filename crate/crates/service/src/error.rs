use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("dataset `{0}` already exists")]
    DatasetExists(String),
    #[error("cannot replay {path}: {reason}")]
    Replay { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] hitl_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
