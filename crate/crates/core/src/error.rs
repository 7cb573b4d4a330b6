use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input does not conform to the interchange schema.
    #[error("schema error{}: {message}", fmt_id(*.id))]
    Schema { id: Option<u64>, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// IoU of two empty masks.
    #[error("IoU undefined: both masks are empty")]
    UndefinedIou,

    #[error("degenerate attention for leaf {leaf_id}: {reason}")]
    DegenerateAttention { leaf_id: u64, reason: String },

    #[error("stem line misses the mask of leaf {leaf_id}")]
    StemMiss { leaf_id: u64 },

    #[error("scene spec infeasible: {0}")]
    Infeasible(String),

    /// A pipeline stage produced output that breaks one of its invariants.
    #[error("internal invariant violated in stage `{stage}`: {message}")]
    Internal { stage: &'static str, message: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

fn fmt_id(id: Option<u64>) -> String {
    id.map(|id| format!(" (id {id})")).unwrap_or_default()
}

impl Error {
    pub fn schema(message: impl Into<String>) -> Self {
        Error::Schema { id: None, message: message.into() }
    }

    pub fn schema_for(id: u64, message: impl Into<String>) -> Self {
        Error::Schema { id: Some(id), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by user input (as opposed to internal failures).
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Internal { .. })
    }
}
