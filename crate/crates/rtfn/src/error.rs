//! Error type shared by every module in the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor was constructed or combined with incompatible shapes.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Shape metadata does not describe the backing buffer.
    #[error("shape {shape:?} describes {expected} elements but buffer holds {actual}")]
    ShapeData {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: axis {axis} out of range for rank-{rank} tensor")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    /// Batch statistics are undefined (fewer than two values per channel).
    #[error("batch normalization needs at least 2 values per channel in train mode, got {count}")]
    DegenerateBatch { count: usize },

    /// A value that must stay finite became NaN or infinite.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    /// Malformed input file; line numbers are 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Dataset-level problem that is not tied to a single line.
    #[error("data error: {0}")]
    Data(String),

    /// Bad run configuration (unknown key, unparsable value, missing field).
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
