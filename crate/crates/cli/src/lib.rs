//! Command implementations behind the `fedsub` binary.

pub mod commands;
pub mod config;

pub use commands::{analyze, gen_data, merge_test, run, AnalyzeReport, ClassTendency, MergeReport, MergeRow, RunOutput};
pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] fedsub_core::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(_) | CliError::Runtime(_) => 1,
        }
    }
}
