//! Operator commands behind the `egail` binary. Each command is a plain
//! function so tests drive it without a subprocess.

mod chat;
mod commands;
mod config;
mod prepare;

use std::path::Path;

use thiserror::Error;

use crate::gail::GailError;
use crate::textdata::DataError;

pub use chat::{run_repl, ChatSession, ChatTurn};
pub use commands::{
    cmd_chat, cmd_eval, cmd_inspect, cmd_stats, cmd_train, inspect_summary, load_checkpoint,
    EvalOutcome, EVAL_DIR, TRAIN_DIR,
};
pub use config::{
    DataConfig, EvalConfig, ModelConfig, Overrides, RunConfig, DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV,
    RESOLVED_CONFIG,
};
pub use prepare::{
    cmd_prepare, gather_corpus, read_prepared, GatheredCorpus, PrepareOutcome, PrepareStats,
    Prepared, DATA_DIR, STATS_FILE, SPLIT_FILES, VOCAB_FILE,
};

/// Failure of a command, classified by exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    /// Bad flags or configuration.
    #[error("{0}")]
    Usage(String),
    /// Missing, malformed or inconsistent input files and artifacts.
    #[error("{0}")]
    Data(String),
    /// Training or evaluation failed after its inputs were accepted.
    #[error("{0}")]
    Training(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Training(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match &e {
            DataError::EmptyCorpus { path, errors } if !errors.is_empty() => {
                let lines: Vec<String> = errors
                    .iter()
                    .take(5)
                    .map(|l| format!("  line {}: {}", l.line, l.message))
                    .collect();
                CliError::Data(format!("{path} has no valid records:\n{}", lines.join("\n")))
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GailError> for CliError {
    fn from(e: GailError) -> Self {
        match e {
            GailError::InvalidConfig(m) => CliError::Usage(format!("invalid training config: {m}")),
            GailError::Corrupt(_) | GailError::Io(_) | GailError::Data(_) => CliError::Data(e.to_string()),
            other => CliError::Training(other.to_string()),
        }
    }
}
