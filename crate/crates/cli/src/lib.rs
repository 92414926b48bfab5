//! Experiment orchestration for the `aidim` command-line tool: configuration,
//! subcommands, the compression/certification pipeline and the desk-scale
//! experiment runners.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
