use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::he::HeError;

/// Pipeline step that consumed a multiplicative level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Square,
    Fc1,
    CompressionMask,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Square => "square",
            Stage::Fc1 => "fc-1",
            Stage::CompressionMask => "compression mask",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    He(#[from] HeError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{stage} step failed: multiplicative depth exhausted")]
    Depth { stage: Stage },
    #[error("index {index} out of range 0..{limit}")]
    Bounds { index: usize, limit: usize },
    #[error("registry block for global index {0} is already occupied")]
    Conflict(usize),
    #[error("unknown global index {0}")]
    NotFound(usize),
    #[error("format error: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("worker {worker} ({endpoint}) failed for shards {}..{}: {reason}", .shards.start, .shards.end.saturating_sub(1))]
    WorkerFault {
        worker: usize,
        endpoint: String,
        shards: Range<usize>,
        reason: String,
    },
    #[error("incomplete aggregation: {0}")]
    IncompleteAggregation(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("server replied {status}: {message}")]
    Remote { status: u16, message: String },
    #[error("synthetic fixture rejected: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Maps a depth failure inside `stage` to [`Error::Depth`].
    pub(crate) fn at(stage: Stage) -> impl Fn(HeError) -> Error {
        move |e| match e {
            HeError::DepthExhausted => Error::Depth { stage },
            other => Error::He(other),
        }
    }
}
