//! Config-driven experiments: runner, presets, artifacts and reports.

pub mod config;
pub mod presets;
pub mod report;
pub mod runner;

pub use config::{Averaging, BaseKind, EvalConfig, ExperimentConfig, OptimizerConfig, ReplayConfig, ReplayMode, ValidationConfig};
pub use presets::{preset, Study, PRESET_NAMES};
pub use runner::{run_experiment, run_in_memory, run_seed, ComputeCounts, RunOutput, Runner, Summary};
