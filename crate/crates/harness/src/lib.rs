//! Experiment harness: dataset ingestion, cross-validated robustness
//! experiments, the dimensionality study and the theory checks.

pub mod artifact;
pub mod config;
pub mod data;
pub mod dimstudy;
pub mod error;
pub mod experiment;
pub mod output;
pub mod theory;

pub use config::{CfMode, DatasetRef, ExperimentConfig, MetricName};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentResult};
