//! Batch runner for loss-based sequential assimilation experiments: dataset generation,
//! episodic assimilation with checkpoints, the EnKF baseline, evaluation and
//! plotting.

pub mod commands;
pub mod config;
pub mod container;
pub mod csvio;
pub mod error;
pub mod lock;
pub mod plot;

pub use config::{ExperimentConfig, TestRange};
pub use error::{CliError, Result};
