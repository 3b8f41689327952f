//! Batch front end: strict JSON experiment configs in, deterministic JSON
//! and CSV reports out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig};
pub use run::{run, RunError, RunOptions, RunOutcome, RunSummary};
