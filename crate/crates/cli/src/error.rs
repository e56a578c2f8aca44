use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    /// A stage output changed after its manifest was written, or a training
    /// manifest violates the requested donor exclusion.
    #[error("input check failed: {0}")]
    InputCheck(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Core(metsynth::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            CliError::MissingInput(path.display().to_string())
        } else {
            CliError::Io { path, source }
        }
    }

    /// 0 success, 2 config error, 3 missing or inconsistent input,
    /// 4 numeric failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput(_) | CliError::InputCheck(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io { .. } | CliError::Core(_) => 1,
        }
    }
}

impl From<metsynth::Error> for CliError {
    fn from(e: metsynth::Error) -> Self {
        match e {
            metsynth::Error::Numeric(m) => CliError::Numeric(m),
            metsynth::Error::Io { path, source } => CliError::io(path, source),
            other => CliError::Core(other),
        }
    }
}
