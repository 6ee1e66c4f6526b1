use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("frame {index} out of range: input holds {available} complete frame(s)")]
    Range { index: usize, available: usize },

    #[error("truncated input: frame {index} needs {needed} bytes, {available} available")]
    Truncated {
        index: usize,
        needed: u64,
        available: u64,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sequencing error: expected CTU {expected}, got {got}")]
    Sequencing { expected: usize, got: usize },

    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("backend failure at CTU {ctu_index}: {source}")]
    Backend {
        ctu_index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Process exit code for this error class.
    ///
    /// 2 is left to the argument parser for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) => 2,
            Error::Parse { .. } | Error::Format(_) | Error::Truncated { .. } => 3,
            Error::Config(_) => 4,
            Error::DegenerateFit(_) => 5,
            Error::Backend { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
