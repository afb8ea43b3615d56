//! Library side of the `calibcube` command-line tool.

pub mod commands;
pub mod config;
pub mod overlay;

use calibcube_core::io::IoError;
use thiserror::Error;

pub use commands::{
    cmd_calibrate, cmd_evaluate, cmd_report, cmd_simulate, Evaluation, ReportSource,
};
pub use config::{InputPaths, PipelineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_BRANCH: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid or inconsistent configuration, or an input that does not
    /// match its schema.
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    /// One or more pipeline branches failed; outputs of the others were
    /// still written.
    #[error("pipeline failure: {}", .0.join("; "))]
    Branch(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Branch(_) => EXIT_BRANCH,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

pub fn exit_code<T>(result: &Result<T, CliError>) -> i32 {
    match result {
        Ok(_) => EXIT_OK,
        Err(e) => e.exit_code(),
    }
}
