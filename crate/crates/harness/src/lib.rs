//! Experiment orchestration: configuration, the baseline, optimization runs
//! over the unit-cube normalization of tilts and HPBWs, transfer studies and
//! artifact output.

pub mod config;
pub mod error;
pub mod experiment;
pub mod normalize;
pub mod output;
pub mod transfer;

pub use config::{Case, DropPolicy, ExperimentConfig, TransferConfig};
pub use error::{Error, Result};
pub use experiment::{run_baseline, run_optimization, run_with, Experiment, RunOptions, RunOutcome};
pub use transfer::{run_transfer_study, TransferStudy};
