//! Glyph image → Gardiner class.

mod cnn;
mod dataset;
mod hog;
mod knn;

use std::path::PathBuf;

pub use cnn::{
    evaluate, predict_topk, train_classifier, ClassifierConfig, EpochStats, Evaluation,
    GlyphClassifier, Prediction, TrainOptions, BACKBONE_PREFIX, HEAD_PREFIX,
};
pub use dataset::{
    rendered_glyph_set, split_dataset, split_indices, ClassIndex, GlyphDataset, SplitSpec,
};
pub use hog::{hog_features, HogConfig};
pub use knn::knn_predict;

#[derive(Debug, thiserror::Error)]
pub enum GlyphError {
    #[error("class {0:?} has no items")]
    EmptyClass(String),
    #[error("k-NN bank is empty")]
    EmptyBank,
    #[error("label {0:?} is not in the class index")]
    UnknownLabel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("dataset {path}: {msg}")]
    Dataset { path: PathBuf, msg: String },
    #[error(transparent)]
    Nn(#[from] hgt_nn::NnError),
    #[error(transparent)]
    Imaging(#[from] hgt_core::imaging::ImagingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GlyphError>;
