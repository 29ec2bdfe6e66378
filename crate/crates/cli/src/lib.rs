//! Experiment runner for the two-path downloader: parameter sweeps in the
//! simulator or against live servers, per-run event logs, a CSV summary
//! table and aggregate statistics.

pub mod config;
pub mod experiment;
pub mod report;
pub mod summary;

pub use config::{ConfigError, ExperimentConfig, Mode, SCHEMA_VERSION};
pub use experiment::{log_path, plan, run_experiment, ExperimentError, ExperimentOutput, RunSpec};
pub use report::{report, CombinationReport, Report, ReportError, Stats};
pub use summary::{read_summary, write_summary, SummaryRow};
