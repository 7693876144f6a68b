use std::path::Path;

use thiserror::Error;

pub const EXIT_IO: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_PARSE: u8 = 3;
pub const EXIT_DOMAIN: u8 = 4;
pub const EXIT_NUMERIC: u8 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    #[error("{path}: {msg}")]
    Config { path: String, msg: String },

    #[error("{module}: {source}")]
    Model { module: &'static str, source: pgrecruit::Error },

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use pgrecruit::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Parse { .. } | CliError::Config { .. } => EXIT_PARSE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Model { source, .. } => match source {
                E::NoCentres => EXIT_USAGE,
                E::Domain(_) | E::EmptyWindow { .. } | E::DegenerateTest(_) => EXIT_DOMAIN,
                E::DegenerateMoments | E::InsufficientData(_) | E::AllZeroCounts | E::SearchBoundExceeded { .. } => {
                    EXIT_NUMERIC
                }
            },
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags model errors with the module that raised them.
pub trait InModule<T> {
    fn during(self, module: &'static str) -> CliResult<T>;
}

impl<T> InModule<T> for pgrecruit::Result<T> {
    fn during(self, module: &'static str) -> CliResult<T> {
        self.map_err(|source| CliError::Model { module, source })
    }
}
