use std::fmt;
use std::path::Path;

use crate::config::ConfigError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_INSUFFICIENT_DATA: u8 = 4;
pub const EXIT_VERIFICATION: u8 = 5;

/// An error carrying the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(EXIT_IO, format!("{}: {err}", path.display()))
    }

    pub fn io_msg(path: &Path, msg: &str) -> Self {
        Self::new(EXIT_IO, format!("{}: {msg}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<ldplab_core::Error> for CliError {
    fn from(e: ldplab_core::Error) -> Self {
        use ldplab_core::Error as E;
        let code = match e {
            E::InvalidArgument(_) | E::PreconditionViolation(_) => EXIT_CONFIG,
            E::InsufficientData(_) => EXIT_INSUFFICIENT_DATA,
        };
        Self::new(code, e.to_string())
    }
}
