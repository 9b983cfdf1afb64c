//! Batch driver: configuration, task orchestration and reports.

pub mod config;
pub mod presets;
pub mod report;
pub mod run;

pub use config::{parse_config, ConfigError, RunConfig, Task};
pub use run::{run, Agreement, Report, RunOutcome};
