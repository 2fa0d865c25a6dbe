use thiserror::Error;

/// Errors raised across the pipeline.
///
/// Contract and parse failures are caller mistakes; [`Error::Divergence`] is
/// the one structured failure that training itself can produce.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged: non-finite value produced by `{op}`")]
    Divergence { op: String },

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("empty batch: {0}")]
    EmptyBatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
