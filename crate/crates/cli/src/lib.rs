//! Command implementations behind the `fairseg` binary.

pub mod commands;
pub mod config;

use std::path::Path;

pub use config::RunConfig;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const DATA: u8 = 3;
    pub const VERIFICATION: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Engine(#[from] fairseg::Error),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Engine errors with a path prefix.
    pub fn at(path: &Path, err: fairseg::Error) -> Self {
        match err {
            fairseg::Error::Io(source) => Self::io(path, source),
            fairseg::Error::Config(m) | fairseg::Error::Spec(m) => CliError::Config(m),
            other => CliError::Data(format!("{}: {other}", path.display())),
        }
    }

    pub fn exit_code(&self) -> u8 {
        use fairseg::Error as E;
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Engine(E::Config(_) | E::Spec(_)) => exit::CONFIG,
            CliError::Verification(_) => exit::VERIFICATION,
            CliError::Io { .. } | CliError::Data(_) | CliError::Engine(_) => exit::DATA,
        }
    }
}
