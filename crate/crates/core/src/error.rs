use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("row {row} is not a probability distribution (sum {sum})")]
    NotADistribution { row: usize, sum: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("target of length {len} is infeasible for {frames} frames")]
    Infeasible { len: usize, frames: usize },

    #[error("unknown {what}: {name}")]
    Unknown { what: &'static str, name: String },

    #[error("model was built for the {built} head, not {requested}")]
    HeadMismatch {
        built: &'static str,
        requested: &'static str,
    },

    #[error("instance too large for exhaustive enumeration ({0} alignments)")]
    TooLarge(u128),

    #[error("mined cache has no entry for sample {0}")]
    MissingMined(u64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, detail: impl ToString) -> Self {
        Error::Parse {
            what,
            detail: detail.to_string(),
        }
    }
}
