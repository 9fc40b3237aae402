//! Error type for file formats, training runs and the command line.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}:{line}: {message}")]
    Record {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Core(#[from] dcmetric_core::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} is newer than supported version {supported}")]
    CheckpointVersion { found: u32, supported: u32 },
    #[error("dump schema version {found} is newer than supported version {supported}")]
    DumpVersion { found: u32, supported: u32 },
    #[error("model produced constant scores ({value}); correlation is undefined. \
             The scorer may be untrained or the checkpoint corrupt")]
    ConstantModelOutput { value: f64 },
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: u64 },
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, ToolError>;
