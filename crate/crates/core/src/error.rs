use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor did not have the shape an operation requires.
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        axis: String,
        expected: usize,
        got: usize,
    },

    /// An operation was invoked out of order (e.g. backward without forward).
    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver instability in {case} at t={time_s:.3e}s (cell {cell:?}, T={temperature})")]
    Instability {
        case: String,
        time_s: f64,
        cell: (usize, usize, usize),
        temperature: f64,
    },

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no temperatures above the melting point; use the default clip threshold of 6500 K")]
    EmptyPool,

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: bad magic bytes")]
    BadMagic { path: PathBuf },

    #[error("{path}: truncated blob ({found} bytes, expected {expected})")]
    Truncated {
        path: PathBuf,
        found: usize,
        expected: usize,
    },

    #[error("{path}: checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    Checksum {
        path: PathBuf,
        stored: u64,
        computed: u64,
    },

    #[error("{path}: malformed {what}: {detail}")]
    Malformed {
        path: PathBuf,
        what: &'static str,
        detail: String,
    },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::State(_) => "state",
            Error::NonFinite { .. } | Error::Instability { .. } | Error::Diverged { .. } | Error::EmptyPool => "numeric",
            Error::Config(_) => "config",
            Error::Frame { source, .. } => source.kind(),
            Error::VersionMismatch { .. }
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::Checksum { .. }
            | Error::Malformed { .. } => "format",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn dim(op: &'static str, axis: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            op,
            axis: axis.into(),
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
