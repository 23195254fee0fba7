//! Experiment runner: checkpoint container, grid config, CSV records and
//! summary reports.

pub mod cell;
pub mod config;
pub mod container;
pub mod report;
pub mod runner;

pub use cell::{enumerate_cells, read_results_csv, write_results_csv, ExperimentCell, RunRecord, RunStatus, CSV_HEADER};
pub use config::{ExperimentConfig, Scale};
pub use container::Container;
pub use report::{stats_report, FrozenArm, StatsRow};
pub use runner::{frozen_comparison, run_grid, FrozenOutcome, GridOutcome};
