//! Experiment harness around the `paralesn` library: TOML-configured runs,
//! hyperparameter sweeps, scan timing probes and self-verification.

pub mod bench;
pub mod config;
pub mod pipeline;
pub mod results;
pub mod run;
pub mod sweep;
pub mod verify;

pub use config::ExperimentConfig;
pub use results::RunResult;
pub use run::cmd_run;
pub use sweep::cmd_sweep;

/// A problem with the command line or configuration (exit code 1).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);
