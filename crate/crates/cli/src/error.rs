use hitl_core::Error as CoreError;

/// Failure of a command, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("{0}")]
    PortInUse(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Dataset(_) => 3,
            CliError::PortInUse(_) => 4,
        }
    }
}

/// Sorts a core error into the config or dataset bucket.
pub fn classify(e: CoreError) -> CliError {
    match e {
        CoreError::InvalidConfig(_) | CoreError::InvalidBatchSize | CoreError::NoHints => CliError::Config(e.to_string()),
        CoreError::BudgetExhausted(_) | CoreError::BackendUnavailable(_) | CoreError::BackendProtocolError(_) => {
            CliError::Runtime(e.to_string())
        }
        _ => CliError::Dataset(e.to_string()),
    }
}

impl From<hitl_service::ServiceError> for CliError {
    fn from(e: hitl_service::ServiceError) -> Self {
        use hitl_service::ServiceError as S;
        match e {
            S::Config(_) | S::DatasetExists(_) => CliError::Config(e.to_string()),
            S::Core(c) => classify(c),
            S::Dataset(_) | S::Replay { .. } | S::Json(_) => CliError::Dataset(e.to_string()),
            S::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
