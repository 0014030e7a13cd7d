//! Experiment orchestration: configuration, data ingestion, metrics, runs
//! and the synthetic benchmark tables.

pub mod config;
pub mod csv_io;
pub mod experiment;
pub mod metrics;
pub mod presets;

pub use config::{DataSource, EvalSplit, ExperimentConfig, Metric};
pub use csv_io::{export_csv, ingest_csv, NamedEpisode};
pub use experiment::{run_experiment, ExperimentOutcome, Report, RunSummary, OUTPUT_DIR_ENV};
pub use metrics::{auprc, auroc, compute_metrics, measurement_rates, rmse};
pub use presets::{reproduce, Condition, RateTable, Table, TableReport};
