//! Experiment runner, presets and acceptance checks for `dpgibo`.

pub mod acceptance;
pub mod config;
mod error;
pub mod presets;
pub mod runner;

pub use config::{ExperimentConfig, MethodSpec, ProblemSpec};
pub use error::HarnessError;
pub use runner::{execute, write_outputs, ExperimentResult, RunOutcome};
