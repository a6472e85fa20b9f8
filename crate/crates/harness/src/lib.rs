//! Experiment harness: TOML configuration, line-delimited scenario records,
//! parallel experiment runs, replay verification and CSV reports.

pub mod config;
pub mod error;
pub mod experiment;
pub mod records;
pub mod replay;
pub mod report;

pub use config::{ExperimentConfig, Technique};
pub use error::{HarnessError, Result};
