//! Experiment harness for the needle problem: configs, dispatch, run
//! records and the exact self-check.

pub mod config;
pub mod experiments;
pub mod record;
pub mod selfcheck;

/// Overrides the directory (not the file name) of every output path.
pub const OUT_DIR_ENV: &str = "NEEDLE_OUT_DIR";

pub use config::{Experiment, ExperimentConfig};
pub use experiments::run_experiment;
pub use record::RunRecord;
