use thiserror::Error;

/// Errors raised across the retrieval pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad-magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("version-mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("truncated-payload: {0}")]
    TruncatedPayload(String),

    #[error("dimension-mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid-argument: {0}")]
    InvalidArgument(String),

    #[error("invalid-data: {0}")]
    InvalidData(String),

    #[error("empty-corpus")]
    EmptyCorpus,

    #[error("missing-ground-truth: query {query} references unknown video {video}")]
    MissingGroundTruth { query: String, video: String },

    #[error("zero-vector: {0}")]
    ZeroVector(String),

    #[error("batch-infeasible: {0}")]
    BatchInfeasible(String),

    #[error("unknown-block: {0}")]
    UnknownBlock(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code for this error.
    pub fn code(&self) -> &'static str {
        match self {
            Error::BadMagic { .. } => "bad-magic",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::TruncatedPayload(_) => "truncated-payload",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::InvalidData(_) => "invalid-data",
            Error::EmptyCorpus => "empty-corpus",
            Error::MissingGroundTruth { .. } => "missing-ground-truth",
            Error::ZeroVector(_) => "zero-vector",
            Error::BatchInfeasible(_) => "batch-infeasible",
            Error::UnknownBlock(_) => "unknown-block",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(what: impl Into<String>) -> Error {
    Error::DimensionMismatch(what.into())
}
