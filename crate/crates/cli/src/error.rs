use std::fmt;

use cyclab_core::Error;

/// A failed command, carrying its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_MISSING: u8 = 4;
pub const EXIT_MALFORMED: u8 = 5;
const EXIT_OTHER: u8 = 1;

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self::new(EXIT_MISSING, message)
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(EXIT_MALFORMED, message)
    }

    pub fn io(context: impl fmt::Display, err: std::io::Error) -> Self {
        Self::new(EXIT_OTHER, format!("{context}: {err}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Ingestion(_) | Error::Selector(_) | Error::Json(_) | Error::UnsupportedOrdering(_) => {
                EXIT_CONFIG
            }
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            Error::Store(_) => EXIT_MISSING,
            _ => EXIT_OTHER,
        };
        Self::new(code, e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;
