//! Config-driven experiments: trials, knob sweeps and comparison tables.
//!
//! Every random stream of a trial is derived from `(master_seed, trial,
//! stream name)`, so the emitted numbers depend only on the config. Trials
//! and sweep points run concurrently and are sorted before output.

pub mod config;
pub mod experiment;
pub mod report;
pub mod sweep;

pub use config::{CsvSource, DataSource, DatasetConfig, ExperimentConfig, ForgetConfig, Method, TestSource};
pub use experiment::{run_experiment, run_experiment_with, ExperimentResults, MethodSummary, MetricStats, RunRecord};
pub use report::{build_report, load_report, ReportRow, ReportTable};
pub use sweep::{run_sweep, run_sweep_with, SweepAxis, SweepPoint, SweepResults, SweepSpec};
