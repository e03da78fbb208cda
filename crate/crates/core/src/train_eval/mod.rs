//! Dataset splitting, the training loop, evaluation metrics and checkpoints.

mod checkpoint;
mod metrics;
mod split;
mod train;

use thiserror::Error;

use crate::nn::NnError;

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use metrics::{
    ClassCounts, ClassMetrics, ConfusionMatrix, Granularity, MetricsReport,
};
pub use split::{split_dataset, DatasetSplit, Fractions};
pub use train::{
    evaluate, majority_vote, predict, train, EpochLog, Evaluation, Sample, TrainConfig,
    TrainOutcome,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("loss diverged to {loss} at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("class {class} has {available} records, too few for a {split} share")]
    ClassTooSmall {
        class: String,
        available: usize,
        split: &'static str,
    },
    #[error("record `{record_id}` has {found} of {expected} images")]
    IncompleteRecord {
        record_id: String,
        found: usize,
        expected: usize,
    },
    #[error("record `{0}` appears in more than one split")]
    Leakage(String),
    #[error("invalid fractions {0:?}")]
    InvalidFractions([f64; 3]),
    #[error("sample `{record_id}` segment {segment}: {msg}")]
    BadSample {
        record_id: String,
        segment: usize,
        msg: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}
