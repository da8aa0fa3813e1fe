//! Holographic embeddings: circular correlation, HolE scoring, logistic losses,
//! negative sampling and the training loop.

pub mod correlation;
pub mod loss;
pub mod model;
pub mod sampling;
pub mod train;

use std::io;
use std::path::Path;

use thiserror::Error;

pub use correlation::{circular_convolution, circular_correlation, flip_check, FftCorrelator};
pub use loss::{binary_loss, multiclass_loss, sigmoid};
pub use model::{EmbeddingModel, ScoredTriple};
pub use sampling::{sample_negatives, NegativeSampler, Negatives};
pub use train::{loss_and_gradients, train, train_examples, Example, LossMode, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("unknown relation {0}")]
    UnknownRelation(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFinite { epoch: usize, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("invalid model file: {0}")]
    Format(String),
}

impl EmbedError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        EmbedError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
