//! Experiment configuration, the training loop, grid search and metrics.

mod config;
mod grid;
mod metrics;
mod runner;
mod summary;

pub use config::{
    Cadence, ExperimentConfig, NetSpec, ProblemSpec, Settings, DEFAULT_MNIST_DIR, DEFAULT_OUT_DIR,
    MNIST_DIR_ENV, OUT_DIR_ENV,
};
pub use grid::{grid_search, grid_search_with_data, Grid, GridCell, GridOutcome, GridParam};
pub use metrics::{read_csv, write_csv, write_jsonl, MetricsRecord, CSV_HEADER, METRICS_SCHEMA_VERSION};
pub use runner::{
    build_problem, load_dataset, run_experiment, run_experiment_with_data, train, ExperimentResult,
    RunResult, RunStatus, TrainSpec,
};
pub use summary::{
    loss_curves, summarize_accuracies, summarize_runs, write_curve_table, AccuracySummary, CurvePoint,
};
