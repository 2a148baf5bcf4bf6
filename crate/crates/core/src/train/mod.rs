//! Training loop, evaluation metrics and the experiment grid.

mod config;
mod grid;
mod metrics;
mod trainer;

pub use config::TrainConfig;
pub use grid::{grid_to_csv, run_experiment_grid, DatasetSplits, GridCell, GridRow, GridSpec, Variant};
pub use metrics::{compute_metrics, ClassMetrics, ConfusionMatrix, MetricsReport};
pub use trainer::{
    build_model, evaluate, train, train_with, write_epoch_log, DevSummary, EpochLog, Evaluation, TrainEvent,
    TrainOutcome,
};
