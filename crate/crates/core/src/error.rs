use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    RawIo(#[from] io::Error),
    #[error("malformed row at line {0}")]
    MalformedRow(usize),
    #[error("file has no data rows")]
    EmptyFile,
    #[error("need at least {needed} interactions, have {have}")]
    InsufficientData { needed: usize, have: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("training loss became non-finite at epoch {epoch}; try a lower learning rate")]
    NonFiniteLoss { epoch: usize },
    #[error("sequence too short: need at least {needed} time points, have {have}")]
    SequenceTooShort { needed: usize, have: usize },
    #[error("edge ({0}, {1}) has an endpoint with degree 0")]
    IsolatedEndpoint(usize, usize),
    #[error("sampled edge ({0}, {1}) has zero sampling probability")]
    ZeroProbability(usize, usize),
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("vector norm {norm} exceeds cap {cap}")]
    NormExceedsCap { norm: f64, cap: f64 },
    #[error("need at least two points, have {0}")]
    TooFewPoints(usize),
    #[error("duplicate group id `{0}`")]
    DuplicateGroupId(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("format version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
