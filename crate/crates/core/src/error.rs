use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: expected rank {expected} tensor, got shape {actual:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        actual: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("batch norm in infer mode requires initialized running statistics")]
    UninitializedRunningStats,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("not a checkpoint (bad magic bytes)")]
    NotACheckpoint,

    #[error("unsupported checkpoint version {0:?}")]
    UnsupportedVersion(char),

    #[error("checkpoint is truncated")]
    Truncated,

    #[error("checkpoint architecture differs from the built-in network: {0}")]
    ArchitectureMismatch(String),

    #[error("image format error: {0}")]
    Format(String),

    #[error("dataset size mismatch for {what}: expected {expected} bytes, got {actual}")]
    DatasetSize {
        what: &'static str,
        expected: u64,
        actual: u64,
    },

    #[error("dataset must contain both positive and negative samples")]
    SingleLabel,

    #[error("class {0:?} is already registered")]
    DuplicateClass(String),

    #[error("no classes registered")]
    EmptyRegistry,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
