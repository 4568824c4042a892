//! Batch experiment runner for the `spinfilter` toolkit.
//!
//! A run is described by an [`ExperimentConfig`]: defaults, then a flat
//! `key = value` file, then command-line overrides. [`runner::run`] executes
//! the scenario and writes per-point and per-trajectory tables plus a
//! `summary.json` into the output directory.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{ConfigError, ExperimentConfig, OutputFormat, Scenario};
pub use runner::{run, RunOutput, Summary};
