//! Experiment driver: configuration, training loops, the bias-variance sweep,
//! metric logging and plot-data export.

mod config;
mod metrics;
mod run;

pub use config::{Command, EstimatorKind, ExperimentConfig, Kappa, TaskKind};
pub use metrics::{export_plot_data, read_jsonl, validate_row, write_jsonl, MetricsRow, RowKind};
pub use run::{
    random_policy_mean_return, run_bias_variance_sweep, run_mrp, run_snake, write_outputs, RunLog,
};
