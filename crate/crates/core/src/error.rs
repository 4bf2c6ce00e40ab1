use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("zero-norm point at row {row}")]
    DegeneratePoint { row: usize },

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("outside the formula's domain: {0}")]
    OutOfDomain(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("parse error at line {line}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: u64,
        column: Option<usize>,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::InvalidInput(_) => "invalid-input",
            Error::DegenerateData(_) => "degenerate-data",
            Error::DegeneratePoint { .. } => "degenerate-point",
            Error::DegenerateDirection(_) => "degenerate-direction",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::OutOfDomain(_) => "out-of-domain",
            Error::OutOfRange(_) => "out-of-range",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit status: 3 for data problems, 4 for numeric-domain problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::OutOfDomain(_)
            | Error::OutOfRange(_)
            | Error::DegenerateDirection(_) => 4,
            _ => 3,
        }
    }

    /// Row/column location for errors tied to a place in the input.
    pub fn location(&self) -> Option<(u64, Option<usize>)> {
        match self {
            Error::Parse { line, column, .. } => Some((*line, *column)),
            Error::DegeneratePoint { row } => Some((*row as u64, None)),
            _ => None,
        }
    }
}

pub(crate) fn invalid_parameter(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn out_of_domain(msg: impl Into<String>) -> Error {
    Error::OutOfDomain(msg.into())
}
