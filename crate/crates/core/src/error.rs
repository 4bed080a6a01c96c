use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs was violated.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Transient backend failure; the caller may retry.
    #[error("backend error (retryable): {0}")]
    Retryable(String),

    /// Backend failure after retries were exhausted, or one that retrying cannot fix.
    #[error("backend error: {0}")]
    Backend(String),

    #[error("payoff cell ({sender}, {receiver}): {source}")]
    Cell {
        sender: usize,
        receiver: usize,
        #[source]
        source: Box<Error>,
    },

    /// An episode aborted mid-way; `completed` holds the stages recorded before the failure.
    #[error("episode {episode} aborted at stage {stage}: {source}")]
    Episode {
        episode: u64,
        stage: usize,
        completed: Vec<crate::history::StageRecord>,
        #[source]
        source: Box<Error>,
    },

    #[error("internal solver error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Retryable(_))
    }
}
