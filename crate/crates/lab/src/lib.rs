//! Experiment harness for `proud-core`: configuration files, dataset,
//! checkpoint and embedding formats, the combination matrix and ablation
//! runners, and report export.

pub mod config;
mod error;
pub mod export;
pub mod formats;
pub mod harness;

pub use config::{Combination, ExperimentConfig, Variant};
pub use error::{LabError, Result};
