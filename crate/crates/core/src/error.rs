use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: {reason}")]
    InvalidDimension { dim: usize, reason: &'static str },

    #[error("value {value} outside the domain [-1, 1]")]
    OutOfDomain { value: f64 },

    #[error("{what} = {value} out of range ({allowed})")]
    Range {
        what: &'static str,
        value: String,
        allowed: &'static str,
    },

    #[error("Lloyd-Max iteration did not converge after {iterations} iterations (last movement {movement:e})")]
    Convergence {
        iterations: usize,
        movement: f64,
        last: Vec<f64>,
    },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("non-finite value in {context} at coordinate {coordinate}")]
    NonFinite { context: String, coordinate: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("PLY parse error: {0}")]
    Parse(String),

    #[error("unsupported PLY encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("unsupported SH layout: {0} f_rest coefficients (expected 0, 9, 24 or 45)")]
    UnsupportedDegree(usize),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// True for errors caused by bad invocation rather than bad data.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
