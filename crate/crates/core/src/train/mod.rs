//! Optimization, metrics and the controlled experiments.

mod experiment;
mod fit;
mod metrics;
mod sgd;

pub use experiment::{
    percentage_drop, run_extent_experiment, run_scale_experiment, run_stacking_experiment,
    run_suite, stacking_csv, train_cell, CellResult, ExperimentData, ExtentRow, ExtentTable, ScaleRow,
    ScaleTable, StackingRow, SuiteResult,
};
pub use fit::{evaluate, predict_dataset, train, EpochRecord, EvalReport, RunReport, TrainOptions};
pub use metrics::{accuracy, average_precision, mean_ap, MeanAp};
pub use sgd::{decayed_params, sgd_step, HParams, Velocity};
