use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("record {id}: {message}")]
    Record { id: String, message: String },

    #[error("invalid sample {id}: {message}")]
    Invariant { id: String, message: String },

    #[error("alignment mismatch: {0}")]
    Alignment(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("all positions are ignored; nothing to supervise")]
    EmptySupervision,

    #[error("invalid image: {0}")]
    Image(String),

    #[error("sample {0} has no image and text-only mode is off")]
    MissingImage(String),

    #[error("backend `{0}` is not available in this build")]
    BackendUnavailable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config hash mismatch: checkpoint has {checkpoint}, run has {run}")]
    ConfigHashMismatch { checkpoint: String, run: String },

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("no training examples")]
    EmptyTrainingSet,

    #[error("split mismatch: {0}")]
    SplitMismatch(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
