//! Experiment configs, runners and the statistical checks behind the acceptance suite.

pub mod checks;
pub mod config;
pub mod experiments;
pub mod game;

pub use config::{ExperimentConfig, ExperimentKind, MASTER_SEED_ENV};
pub use experiments::{run_and_write, run_experiment, ExperimentReport, Summary};
