//! Dataset ingestion, cross-validation splits, training, checkpoints and
//! batch inference.

mod checkpoint;
mod data;
mod predict;
mod split;
mod synthetic;
mod train;

use thiserror::Error;

use crate::model::ModelError;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, FORMAT_VERSION};
pub use data::{
    load_dataset, read_dataset, transform_affinity, write_dataset, AffinitySpace, DatasetRecord, LoadReport,
    QuarantinedRow, CSV_HEADER,
};
pub use predict::{predict_batch, PredictionOutput};
pub use split::{kfold_split, Fold};
pub use synthetic::{random_protein, random_smiles, synthetic_teacher_set};
pub use train::{predict_samples, train, EpochLog, FeatureCache, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read {path}: {reason}")]
    FileUnreadable { path: String, reason: String },
    #[error("expected header 'smiles,protein,affinity,space', found '{0}'")]
    HeaderMismatch(String),
    #[error("K_d must be positive, got {0}")]
    NonPositiveKd(f64),
    #[error("{records} records cannot be split into {folds} folds")]
    TooFewRecords { records: usize, folds: usize },
    #[error("record {record}: {reason}")]
    Featurize { record: usize, reason: String },
    #[error("record {record} has no affinity")]
    MissingAffinity { record: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
