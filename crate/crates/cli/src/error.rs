use std::path::PathBuf;
use std::process::ExitCode;

use rocore::trainer::TrainError;
use serde::Serialize;

/// Failure of a command, split by the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration, files or dimensions. Exit code 1.
    Validation(String),
    /// The computation itself failed. Exit code 2.
    Runtime {
        message: String,
        last_good_checkpoint: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    last_good_checkpoint: Option<String>,
}

impl CliError {
    pub fn runtime(message: impl Into<String>) -> Self {
        CliError::Runtime {
            message: message.into(),
            last_good_checkpoint: None,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(1),
            CliError::Runtime { .. } => ExitCode::from(2),
        }
    }

    /// One line of JSON for stderr.
    pub fn to_json(&self) -> String {
        let body = match self {
            CliError::Validation(message) => ErrorJson {
                error: "validation",
                message,
                last_good_checkpoint: None,
            },
            CliError::Runtime {
                message,
                last_good_checkpoint,
            } => ErrorJson {
                error: "runtime",
                message,
                last_good_checkpoint: last_good_checkpoint
                    .as_ref()
                    .map(|p| p.display().to_string()),
            },
        };
        serde_json::to_string(&body).expect("error JSON serializes")
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let message = e.to_string();
        match e {
            TrainError::Config(_)
            | TrainError::Data(_)
            | TrainError::Evaluation(_)
            | TrainError::Checkpoint { .. } => CliError::Validation(message),
            _ => CliError::runtime(message),
        }
    }
}

impl From<rocore::data::DataError> for CliError {
    fn from(e: rocore::data::DataError) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Validation(format!("{}: {e}", path.display()))
}
