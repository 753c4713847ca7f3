use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the engine.
///
/// [`Error::is_validation`] separates bad inputs (malformed files, out of range
/// parameters, mismatched geometry) from runtime failures such as I/O or
/// network errors; the CLI maps the two classes to different exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload {}", Location(*.record))]
    Truncated { record: Option<usize> },

    #[error("non-finite {field} value in record {record}")]
    NonFinite { record: usize, field: &'static str },

    #[error("{0} unexpected trailing bytes after the last record")]
    TrailingBytes(usize),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("invalid prior response: {0}")]
    Prior(#[from] crate::priors::ResponseError),

    #[error("prior fetch failed for {} class(es): {}", .0.len(), FailureList(.0))]
    PriorFetch(Vec<(String, String)>),

    #[error("http error: {0}")]
    Http(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }

    /// True when the error stems from invalid input rather than the runtime
    /// environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Http(_) | Error::PriorFetch(_))
    }
}

struct Location(Option<usize>);

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(i) => write!(f, "in record {i}"),
            None => f.write_str("in header"),
        }
    }
}

struct FailureList<'a>(&'a [(String, String)]);

impl fmt::Display for FailureList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (class, reason)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{class}: {reason}")?;
        }
        Ok(())
    }
}
