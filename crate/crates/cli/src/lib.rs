//! The `aact` command line: training, critique, the session service, the
//! participant simulator and transcript scoring.
//!
//! Exit codes: 0 on success, 1 for invalid arguments or configuration, 2
//! when a command fails while running.

pub mod args;
pub mod commands;
pub mod report;
pub mod settings;

pub use args::Cli;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub(crate) fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}
