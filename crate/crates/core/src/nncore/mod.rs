//! Minimal neural network core: tensors, layers with hand-written
//! backward passes, binary cross-entropy, Adam and a training loop with
//! early stopping.

mod graph;
pub mod io;
mod loss;
mod ops;
mod optim;
mod recurrent;
mod spec;
mod tensor;
mod train;

use thiserror::Error;

pub use graph::{word_dropout, ForwardPass, Mode, ModelGraph, OUTPUT_EPSILON};
pub use loss::{bce_grad, bce_loss, BCE_EPSILON};
pub use optim::{optimizer_step, AdamConfig, AdamState};
pub use spec::{Activation, LayerSpec, RecurrentOutput, Shape};
pub use tensor::{Parameter, Real, Tensor};
pub use train::{
    evaluate_loss, train, EarlyStopping, EpochRecord, LabeledSequence, StopReason, TrainConfig,
    TrainHistory, Verdict,
};


#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer}: {detail}")]
    Shape { layer: String, detail: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("backward called without cached activations")]
    NoCachedActivations,
    #[error("expected {expected} loss gradients, got {found}")]
    GradientLength { expected: usize, found: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("empty training set")]
    EmptyTrainingSet,
}

impl NnError {
    pub(crate) fn shape(layer: &str, detail: impl Into<String>) -> Self {
        NnError::Shape {
            layer: layer.to_string(),
            detail: detail.into(),
        }
    }
}
