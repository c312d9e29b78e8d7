//! Experiments built on `dam-core`: dimensionality reduction, structured
//! pruning of dense classifiers, their analysis tools and the `damlab` CLI.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod csv_out;
pub mod data;
pub mod dr;
pub mod error;
pub mod prune;
pub mod trace;
pub mod train;

pub use error::{LabError, Result};
pub use trace::{EpochRecord, GateRecord, RunTrace};
pub use train::{fit, TrainConfig, Targets};
