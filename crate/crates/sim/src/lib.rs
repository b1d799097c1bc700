//! Simulation harness, file formats and experiment grids for the vehicular
//! federated learning simulator. The algorithms live in `v2xfl-core`.

// `!(x >= 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod harness;
pub mod grid;
pub mod idx;
pub mod output;

pub use config::{ConfigError, DatasetSource, ExperimentConfig, ExperimentSettings, Seeds};
pub use harness::{run_experiment, RoundRecord, RunSummary, SimError, Simulation};
