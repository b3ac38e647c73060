use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("precondition violated in {op}: {detail}")]
    Precondition { op: &'static str, detail: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("episode already finished; call reset before stepping")]
    EpisodeFinished,

    #[error("invalid cost matrix: {0}")]
    CostMatrix(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("trajectory: {0}")]
    Trajectory(String),

    #[error("curriculum stage with {agents} agents did not reach the success threshold within {updates} updates")]
    StageFailed { agents: usize, updates: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn precondition(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Precondition {
            op,
            detail: detail.into(),
        }
    }
}
