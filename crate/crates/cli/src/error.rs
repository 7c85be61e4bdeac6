use llm_nids::catalog::CatalogError;
use llm_nids::detection::DetectError;
use llm_nids::eval::EvalError;
use llm_nids::llm_client::LlmError;
use llm_nids::prompting::PromptError;
use llm_nids::selection::SelectionError;
use thiserror::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;
pub const EXIT_EVALUATION: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Bad or unreadable configuration and inputs.
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Transport(String),
    #[error("{0}")]
    Evaluation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) | CliError::Transport(_) => EXIT_BACKEND,
            CliError::Evaluation(_) => EXIT_EVALUATION,
        }
    }

    pub fn io(what: impl std::fmt::Display, e: std::io::Error) -> Self {
        CliError::Config(format!("{what}: {e}"))
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Transport(e.to_string()),
        }
    }
}

impl From<CatalogError> for CliError {
    fn from(e: CatalogError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::Llm(inner) => inner.into(),
            PromptError::Detection(_) => CliError::Transport(e.to_string()),
            PromptError::Io(_) => CliError::Config(e.to_string()),
            other => CliError::Evaluation(other.to_string()),
        }
    }
}

impl From<DetectError> for CliError {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::Llm(inner) => inner.into(),
            other => CliError::Evaluation(other.to_string()),
        }
    }
}

impl From<SelectionError> for CliError {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::Llm(inner) => inner.into(),
            SelectionError::CountTooLarge { .. } | SelectionError::ZeroCount => CliError::Usage(e.to_string()),
            other => CliError::Evaluation(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Prompt(inner) => inner.into(),
            // A run only aborts when the backend fails.
            EvalError::Aborted { .. } => CliError::Transport(e.to_string()),
            EvalError::BadFraction(_) | EvalError::NoWorkers | EvalError::InvalidSweep(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Evaluation(other.to_string()),
        }
    }
}
