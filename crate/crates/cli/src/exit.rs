use std::fmt;

use fedfair::Error;

/// Failure exit codes. Stable; success is always `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    InvalidConfig = 1,
    Parse = 2,
    Output = 3,
    Schema = 4,
    Runtime = 5,
}

/// A failure that ends the process with `code`.
#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub message: String,
}

impl Failure {
    pub fn new(code: Code, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    /// Classifies a library error raised while reading inputs.
    pub fn reading(context: &str, e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => Code::InvalidConfig,
            Error::SchemaMismatch { .. } => Code::Schema,
            Error::Toml(_) | Error::Json(_) | Error::Csv(_) | Error::Io { .. } => Code::Parse,
            _ => Code::Runtime,
        };
        Self::new(code, format!("{context}: {e}"))
    }

    pub fn output(context: &str, e: impl fmt::Display) -> Self {
        Self::new(Code::Output, format!("{context}: {e}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;
