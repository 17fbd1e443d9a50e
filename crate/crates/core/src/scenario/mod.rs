//! Scenario files, the closed-loop runner, run logs, metrics and batches.

mod batch;
mod config;
mod log;
mod metrics;
mod runner;
mod scene;

pub use batch::{aggregate, run_batch, write_aggregate_csv, write_metrics_csv, AggregateRow, BatchGrid, TrialResult, AGGREGATE_COLUMNS};
pub use config::*;
pub use log::*;
pub use metrics::*;
pub use runner::{resolve, run_scenario, RunOutcome};
pub use scene::SceneGenerator;
