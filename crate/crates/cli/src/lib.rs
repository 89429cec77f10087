//! Experiment runner over the adiabatic hierarchy library: manifest parsing,
//! run orchestration, sweeps, hierarchy comparison, and CSV/JSON emission.

pub mod checks;
pub mod compare;
pub mod config;
pub mod output;
pub mod presets;
pub mod run;
pub mod sweep;

pub use compare::{compare_hierarchy, CompareReport};
pub use config::{ConfigError, ExperimentConfig, SweepAxis};
pub use run::{execute, run_experiment, CliError, RunArtifacts, RunSummary};
pub use sweep::{log_log_slope, run_sweep, SweepEntry};
