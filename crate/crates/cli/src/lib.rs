//! Command implementations behind the `gazecheck` binary. Each command is a
//! plain function over a resolved [`config::PipelineConfig`], so tests can
//! drive the pipeline without spawning processes.

pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod output;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
