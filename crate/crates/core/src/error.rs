use std::fmt;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: Dims, actual: Dims },
    #[error("attention map is empty")]
    EmptyMap,
    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },
    #[error("unsupported format version {found} in {source_name} (expected {expected})")]
    Version {
        source_name: String,
        found: u32,
        expected: u32,
    },
    #[error("image codec: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Width × height pair used in dimension errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims(pub usize, pub usize);

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(
        source_name: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dims(expected: (usize, usize), actual: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected: Dims(expected.0, expected.1),
            actual: Dims(actual.0, actual.1),
        }
    }
}
