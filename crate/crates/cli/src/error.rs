use thiserror::Error;

/// Errors surfaced by commands, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<aidim::Error> for CliError {
    fn from(e: aidim::Error) -> Self {
        use aidim::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::InvalidArgument(_) | E::Unsupported(_) => CliError::Config(msg),
            E::NonFinite(_) | E::Diverged { .. } => CliError::Numeric(msg),
            E::Dimension { .. }
            | E::EmptyDataset
            | E::Parse(_)
            | E::Corrupt(_)
            | E::Version { .. }
            | E::Io(_)
            | E::Json(_) => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
