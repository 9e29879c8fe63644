//! Config-driven experiments: loading run configurations, running commands
//! over replicates, and summarizing run directories.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{ConfigError, RunConfig};
pub use experiment::{run_experiment, Command, DiagnoseKind, RunError, RunManifest, RunOptions};
pub use report::{emit_report, ReportError};
