use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("trajectory inconsistent with game dynamics at step {step}: {reason}")]
    Dynamics { step: usize, reason: String },

    #[error("enumeration of {count} trajectories exceeds the cap of {cap}")]
    EnumerationCap { count: f64, cap: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("unknown archetype tag `{0}`")]
    UnknownArchetype(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn out_of_range(what: &'static str, index: usize, limit: usize) -> Self {
        Error::OutOfRange { what, index, limit }
    }
}
