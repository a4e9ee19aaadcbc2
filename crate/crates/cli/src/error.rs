use std::path::{Path, PathBuf};

use thiserror::Error;

/// Exit code for domain failures (bad input data, I/O, numerical errors).
pub const EXIT_DOMAIN: u8 = 1;
/// Exit code for usage errors (bad flags or config), raised before any output
/// is written.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } | CliError::Domain(_) => EXIT_DOMAIN,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.to_owned();
        move |source| CliError::Io { path, source }
    }

    pub fn domain(e: impl std::fmt::Display) -> CliError {
        CliError::Domain(e.to_string())
    }
}
