//! Batch front end: configuration, task execution and output files.

pub mod config;
pub mod run;

pub use config::{parse_config, RunConfig, Task};
pub use run::{kernel_selftest, manifest_hash, manifest_text, run, OutputLock, RunSummary, TaskOutcome};
