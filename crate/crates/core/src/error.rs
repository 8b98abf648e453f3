use thiserror::Error;

/// Errors produced across the testbed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("underdetermined fit: {samples} samples for {required} control points")]
    Underdetermined { samples: usize, required: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("query {query} outside log span [{start}, {end}]")]
    OutOfRange { query: f64, start: f64, end: f64 },

    #[error("simulation fault: {0}")]
    Fault(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("truncated datagram: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("unsupported packet version {0}")]
    UnsupportedVersion(u8),

    #[error("track file line {line}: {msg}")]
    TrackFormat { line: usize, msg: String },

    #[error("log file: {0}")]
    LogFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Underdetermined { .. } => "underdetermined",
            Error::DegenerateData(_) => "degenerate-data",
            Error::InsufficientData(_) => "insufficient-data",
            Error::OutOfRange { .. } => "out-of-range",
            Error::Fault(_) => "fault",
            Error::Protocol(_) => "protocol",
            Error::Truncated { .. } => "truncated",
            Error::UnsupportedVersion(_) => "unsupported-version",
            Error::TrackFormat { .. } => "track-format",
            Error::LogFormat(_) => "log-format",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
