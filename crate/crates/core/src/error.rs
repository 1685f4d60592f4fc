use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while reading or validating an `MMFM` checkpoint container or a
/// memory-bank snapshot.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated image: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("missing entry `{0}`")]
    Missing(String),
    #[error("config hash mismatch: checkpoint {found:016x}, current {expected:016x} (pass --allow-config-mismatch to override)")]
    ConfigHashMismatch { expected: u64, found: u64 },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("degenerate embedding: row {row} has norm {norm:e}")]
    DegenerateEmbedding { row: usize, norm: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("{path}:{line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },

    #[error("memory bank: {0}")]
    Memory(String),

    #[error("data: {0}")]
    Data(String),

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short stable identifier used in the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::DegenerateEmbedding { .. } => "degenerate-embedding",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::DegenerateTest(_) => "degenerate-test",
            Error::Manifest { .. } => "manifest",
            Error::Memory(_) => "memory",
            Error::Data(_) => "data",
            Error::Checkpoint(c) => match c {
                CheckpointError::BadMagic { .. } => "bad-magic",
                CheckpointError::UnsupportedVersion(_) => "bad-version",
                CheckpointError::Truncated { .. } => "truncated",
                CheckpointError::Integrity(_) => "integrity",
                CheckpointError::ShapeMismatch { .. } => "tensor-shape",
                CheckpointError::Missing(_) => "missing-entry",
                CheckpointError::ConfigHashMismatch { .. } => "config-hash",
            },
            Error::Image { .. } => "image",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code for this failure. Every checkpoint failure class
    /// gets its own code, distinct from plain I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Config(_) => 3,
            Error::Io { .. } => 4,
            Error::Manifest { .. } | Error::Data(_) | Error::Image { .. } => 5,
            Error::Shape { .. }
            | Error::DegenerateEmbedding { .. }
            | Error::UndefinedMetric(_)
            | Error::DegenerateTest(_)
            | Error::Memory(_) => 6,
            Error::Checkpoint(c) => match c {
                CheckpointError::BadMagic { .. } => 10,
                CheckpointError::UnsupportedVersion(_) => 11,
                CheckpointError::Truncated { .. } => 12,
                CheckpointError::Integrity(_) => 13,
                CheckpointError::ShapeMismatch { .. } => 14,
                CheckpointError::Missing(_) => 15,
                CheckpointError::ConfigHashMismatch { .. } => 16,
            },
        }
    }
}
