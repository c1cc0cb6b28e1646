//! Error types shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid model spec, optimizer config, or run config.
    #[error("configuration: {0}")]
    Config(String),

    /// A caller violated an operation precondition (dimension mismatch,
    /// out-of-range argument, empty input, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced a non-finite value.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Non-finite value during an optimizer step; carries the step counter.
    #[error("non-finite {what} at step {step_count}")]
    NonFiniteStep { what: &'static str, step_count: u64 },

    /// Training aborted on a non-finite loss. Metrics up to the last good
    /// epoch are preserved in `partial`.
    #[error("numeric divergence at epoch {epoch} (last good epoch: {last_good:?})")]
    Divergence {
        epoch: usize,
        last_good: Option<usize>,
        partial: Box<crate::harness::RunResult>,
    },

    /// An estimator had no usable samples.
    #[error("estimation: {0}")]
    Estimation(String),

    /// Malformed binary input; `offset` is the byte position of the defect.
    #[error("format error in {path} at byte {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
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
