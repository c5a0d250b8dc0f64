use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid parameter selector: {0}")]
    Selector(String),

    #[error("corpus ingestion failed: {0}")]
    Ingestion(String),

    #[error("training diverged at episode {episode}: {detail}")]
    Divergence { episode: usize, detail: String },

    #[error("unsupported task ordering: {0}")]
    UnsupportedOrdering(String),

    #[error("checkpoint store: {0}")]
    Store(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        detail: detail.into(),
    }
}
