use kgsynth_core::Error as CoreError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const BUDGET_EXHAUSTED: i32 = 4;
    pub const ARTIFACT: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("budget_exhausted: {0}")]
    BudgetExhausted(String),
    #[error("model artifact rejected: {0}")]
    Artifact(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Data(_) => exit::DATA,
            CliError::BudgetExhausted(_) => exit::BUDGET_EXHAUSTED,
            CliError::Artifact(_) => exit::ARTIFACT,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::MissingFile(_)
            | CoreError::InvalidSchema(_)
            | CoreError::InvalidArgument(_)
            | CoreError::InvalidRules(_)
            | CoreError::Format(_) => CliError::Config(msg),
            CoreError::Io { .. }
            | CoreError::Csv(_)
            | CoreError::HeaderMismatch { .. }
            | CoreError::Unparsable { .. }
            | CoreError::MissingValue { .. }
            | CoreError::UnknownCategory { .. }
            | CoreError::EmptyTable
            | CoreError::AlreadyMasked(_)
            | CoreError::UncoveredValue { .. }
            | CoreError::UnknownLabel { .. }
            | CoreError::UndecodableGroup { .. }
            | CoreError::RuleViolations { .. }
            | CoreError::MalformedCondition(_)
            | CoreError::Tensor(_) => CliError::Data(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
