//! Error taxonomy shared by every module in the crate.

/// Crate-wide error type.
///
/// Variants are grouped by what went wrong rather than where: shape
/// disagreements, bad parameter values, malformed configuration, numeric
/// trouble (non-finite values, diverging iterations), misuse of an API
/// contract, bad data, and file-format violations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A scalar argument is outside its valid range.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A configuration value or combination is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Non-finite values appeared where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An iterative solver produced non-finite iterates.
    #[error("divergence: {0}")]
    Divergence(String),

    /// An API contract was violated (wrong mode, wrong tape, empty input...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data violates a documented precondition (e.g. out-of-range index).
    #[error("data error: {0}")]
    Data(String),

    /// A serialized tensor file is malformed; `offset` is the byte position
    /// at which parsing failed.
    #[error("file format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn divergence(msg: impl Into<String>) -> Self {
        Error::Divergence(msg.into())
    }
    pub fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    /// Stable lowercase token naming the variant, for machine-readable
    /// error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Param(_) => "param",
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::Divergence(_) => "divergence",
            Error::Usage(_) => "usage",
            Error::Data(_) => "data",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code for this error: 2 for usage and configuration
    /// mistakes (the caller can fix the invocation), 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Param(_) => 2,
            _ => 1,
        }
    }
}
