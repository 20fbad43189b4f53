//! Experiment runner library behind the `opdlab` binary: strict config
//! parsing, run persistence, CSV export, and the verification entry point.

pub mod commands;
pub mod config;
pub mod export;
pub mod persist;

pub use config::ExperimentFile;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("verification failed: {0}")]
    Verify(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verify(_) => 3,
        }
    }
}
