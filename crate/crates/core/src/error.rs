use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by [`ErrorKind`], which the command-line front end
/// maps onto its exit-code taxonomy.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: {detail}")]
    Shape {
        op: &'static str,
        dim: String,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model spec error at layer {layer} ({name}): {detail}")]
    Spec { layer: usize, name: String, detail: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}: cannot decode image: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("{}: malformed {what}: {detail}", path.display())]
    Format {
        path: PathBuf,
        what: &'static str,
        detail: String,
    },

    #[error("{}: file truncated while reading {context}", path.display())]
    Truncated { path: PathBuf, context: String },

    #[error("{}: unsupported format version {found} (expected {expected})", path.display())]
    Version { path: PathBuf, found: u32, expected: u32 },

    #[error("checkpoint shape inconsistency: {0}")]
    Inconsistent(String),

    #[error("feature dimension mismatch at row {row}: expected {expected}, found {found}")]
    Dimension { row: usize, expected: usize, found: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("batch norm site {site}: running statistics were never updated; run at least one train-mode forward before inference")]
    StatsNotInitialized { site: String },

    #[error("backward called with {0}")]
    StaleCache(String),

    #[error("operation is not deterministic under a fixed seed: {0}")]
    NonDeterministic(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::Spec { .. } => ErrorKind::Usage,
            Error::Shape { .. }
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Format { .. }
            | Error::Truncated { .. }
            | Error::Version { .. }
            | Error::Inconsistent(_)
            | Error::Dimension { .. }
            | Error::Data(_) => ErrorKind::Data,
            Error::StatsNotInitialized { .. }
            | Error::StaleCache(_)
            | Error::NonDeterministic(_)
            | Error::NonFiniteLoss { .. }
            | Error::Numerical(_) => ErrorKind::Numerical,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, dim: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            dim: dim.into(),
            detail: detail.into(),
        }
    }
}
