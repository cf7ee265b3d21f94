use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or semantically invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("runs are not comparable: {0}")]
    IncompatibleRuns(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] snpekit_core::Error),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    /// 2 for bad input, 3 for simulator failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use snpekit_core::Error as E;
        match self {
            CliError::Config(_) | CliError::IncompatibleRuns(_) => 2,
            CliError::Core(E::Simulation(_)) => 3,
            CliError::Core(E::InvalidArgument(_) | E::Parse(_) | E::DimensionMismatch { .. }) => 2,
            _ => 1,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(snpekit_core::Error::Io(e.to_string()))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
