//! Training harness: optimizer, schedule, metrics, experiment runner and
//! checkpoints.

mod checkpoint;
mod config;
mod metrics;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, BatchNormEntry, Manifest, ParamEntry};
pub use config::{apply_override, ExperimentConfig};
pub use metrics::{
    accuracy, argmax_rows, class_weights, mean_absolute_error, task_loss, weighted_accuracy, BatchTargets, MeanSd,
    MetricKind, MetricsRecord, Split, SplitAccumulator, SplitEval,
};
pub use optim::{Adam, Plateau, IMPROVEMENT_THRESHOLD};
pub use train::{
    eval_with_scale, evaluate_batches, run_experiment, run_experiment_on, run_seed, EvalOutput, ExperimentResult,
    PreparedBatch, PreparedData, Probe, ScaleRow, SeedRun, Sink, SplitTriple, Summary, TrainedModel, Trainer,
};
