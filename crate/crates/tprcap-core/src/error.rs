//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by tensor arithmetic, model construction, file formats,
/// and training.
#[derive(Debug)]
pub enum Error {
    /// Dimension mismatch between operands; names both shapes.
    Shape {
        op: &'static str,
        detail: String,
    },
    /// Operand has the wrong rank for the operation.
    Rank {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    /// Sequence exceeds the role capacity of a TPR.
    Capacity {
        requested: usize,
        capacity: usize,
    },
    /// Index out of range.
    Index {
        index: usize,
        len: usize,
    },
    /// Input failed a structural validation check.
    Validation(String),
    /// API contract violated (non-scalar backward root, repeated backward, ...).
    Contract(String),
    /// Malformed line in a text format; `line` is 1-based.
    Format {
        line: usize,
        msg: String,
    },
    /// Binary payload failed its integrity check.
    Corrupt(String),
    /// Unsupported container version.
    Version {
        found: u32,
        supported: u32,
    },
    /// Non-finite value encountered where finite math is required.
    Numeric(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "{op}: dimension mismatch: {detail}"),
            Error::Rank { op, expected, got } => {
                write!(f, "{op}: expected {expected}, got shape {got:?}")
            }
            Error::Capacity { requested, capacity } => write!(
                f,
                "role capacity exceeded: position {requested} with capacity {capacity}"
            ),
            Error::Index { index, len } => write!(f, "index {index} out of range (len {len})"),
            Error::Validation(msg) => write!(f, "validation failed: {msg}"),
            Error::Contract(msg) => write!(f, "contract violated: {msg}"),
            Error::Format { line, msg } => write!(f, "line {line}: {msg}"),
            Error::Corrupt(msg) => write!(f, "corrupt payload: {msg}"),
            Error::Version { found, supported } => {
                write!(f, "unsupported format version {found} (supported: {supported})")
            }
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
