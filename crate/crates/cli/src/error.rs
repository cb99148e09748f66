use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration, missing input files.
    #[error("{0}")]
    Usage(String),

    /// Input files that exist but cannot be used.
    #[error("{0}")]
    Input(String),

    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }

    pub fn input(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }

    pub fn output(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Usage(format!("cannot write {}: {err}", path.display()))
    }
}

impl From<stepgrpo::Error> for CliError {
    fn from(e: stepgrpo::Error) -> Self {
        use stepgrpo::Error as E;
        match e {
            E::InvalidConfig(_) | E::EmptyTaskList | E::EmptyDataset => CliError::Usage(e.to_string()),
            E::Divergence { .. } | E::InvalidRatio(_) => CliError::Divergence(format!("training diverged: {e}")),
            _ => CliError::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
