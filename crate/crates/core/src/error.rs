use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {0} has zero norm and cannot be normalized")]
    ZeroRow(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("input is empty")]
    EmptyInput,

    #[error("row {row} contains a non-finite value")]
    NonFinite { row: usize },

    #[error("duplicate identifier `{0}`")]
    DuplicateId(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed record {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },

    #[error("no keyword carries any of the semantic types {0:?}")]
    EmptyResult(Vec<String>),

    #[error("pool has {pool} keywords but {embeddings} keyword embeddings were supplied")]
    PoolEmbeddingMismatch { pool: usize, embeddings: usize },

    #[error("keyword `{0}` has no embedding")]
    MissingKeywordEmbedding(String),

    #[error("k = {k} exceeds the number of samples {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("silhouette needs at least two distinct clusters")]
    SingleCluster,

    #[error("cluster count {k} differs from class count {classes}")]
    KClassMismatch { k: usize, classes: usize },

    #[error("batch of {0} rows is too small for batch-norm statistics")]
    BatchTooSmall(usize),

    #[error("non-finite gradient encountered")]
    NonFiniteGradient,

    #[error("class {0} has no training samples")]
    MissingClassInTrain(usize),

    #[error("cannot place anchors with the requested margin: {0}")]
    InfeasibleMargin(String),

    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
