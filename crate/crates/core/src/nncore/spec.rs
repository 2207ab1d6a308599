use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Rectifier,
    Sigmoid,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrentOutput {
    /// One state per input position.
    Sequence,
    /// Concatenated final states of both directions.
    Final,
}

/// Declarative description of one layer. A [`super::ModelGraph`] is built
/// from a list of these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Embedding {
        vocab_size: usize,
        dim: usize,
        word_dropout: f64,
    },
    /// Valid (unpadded) 1-D convolution followed by a rectifier.
    Conv1d { width: usize, filters: usize },
    MaxOverTime,
    AvgOverTime,
    BiLstm {
        units: usize,
        dropout: f64,
        output: RecurrentOutput,
    },
    BiGru { units: usize, dropout: f64 },
    AdditiveAttention { units: usize },
    Dense { units: usize, activation: Activation },
    Dropout { rate: f64 },
    /// Runs every branch on the same input and concatenates the resulting
    /// vectors.
    Parallel { branches: Vec<Vec<LayerSpec>> },
}

/// What flows between layers, per example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Indices { len: usize },
    Sequence { steps: usize, width: usize },
    Vector { width: usize },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Embedding { .. } => "embedding",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::MaxOverTime => "max_over_time",
            LayerSpec::AvgOverTime => "avg_over_time",
            LayerSpec::BiLstm { .. } => "bi_lstm",
            LayerSpec::BiGru { .. } => "bi_gru",
            LayerSpec::AdditiveAttention { .. } => "additive_attention",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Parallel { .. } => "parallel",
        }
    }
}
