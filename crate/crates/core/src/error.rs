use std::path::PathBuf;

use taskmask_nn::CheckpointError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u64,
        expected: u64,
    },
    #[error("invalid record for frame `{frame_id}`: {reason}")]
    Record { frame_id: String, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("scene {index}: could not place {what} after {attempts} attempts")]
    Placement {
        index: u64,
        what: &'static str,
        attempts: usize,
    },
    #[error("model budget exceeded: {count} parameters (limit {limit})")]
    ParamBudget { count: usize, limit: usize },
    #[error("task mismatch: adapter is `{adapter}`, request needs `{requested}`")]
    TaskMismatch {
        adapter: &'static str,
        requested: &'static str,
    },
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("utility parameters changed during training ({before} -> {after})")]
    UtilityMutated { before: String, after: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn record(frame_id: &str, reason: impl Into<String>) -> Self {
        Self::Record {
            frame_id: frame_id.to_string(),
            reason: reason.into(),
        }
    }
}
