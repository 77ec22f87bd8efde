use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while reading a versioned model or detector container.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LoadError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: String },
    #[error("format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("malformed descriptor: {0}")]
    Descriptor(String),
}

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A non-finite value showed up where a finite one is required.
    #[error("numeric error at {location}: {detail}")]
    Numeric { location: String, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at row {row}: {detail}")]
    Parse { row: usize, detail: String },
    #[error("ordering error at row {row}: {detail}")]
    Ordering { row: usize, detail: String },
    #[error("insufficient data: need {needed} frames, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("architecture error: {0}")]
    Architecture(String),
    #[error("duplicate records rejected: {}", .0.join(", "))]
    Duplicate(Vec<String>),
    #[error("undefined statistic: {0}")]
    Undefined(String),
    #[error("missing artifact {}: run `{producer}` first", .path.display())]
    MissingArtifact { path: PathBuf, producer: String },
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code used by the command-line tool: 2 for I/O and
    /// schema failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Schema(_)
            | Error::Parse { .. }
            | Error::Ordering { .. }
            | Error::Load(_)
            | Error::MissingArtifact { .. } => 2,
            _ => 1,
        }
    }
}
