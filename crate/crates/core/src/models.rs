//! The three offensive-language classifiers and their averaging ensemble.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{
    build_embedding_matrix, build_vocabulary, encode, EmbeddingTable, EncodedSequence, Vocabulary,
    EMBEDDING_DIM, MAX_LEN,
};
use crate::ingest::{Dataset, OffenseLabel};
use crate::nncore::io::{load_model, save_model, ModelFileError};
use crate::nncore::{
    train, Activation, LabeledSequence, LayerSpec, ModelGraph, NnError, Real, RecurrentOutput,
    Tensor, TrainConfig, TrainHistory,
};
use crate::preprocess::{PreprocessConfig, PreprocessError, Preprocessor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("embedding dimension {found}, expected {expected}")]
    EmbeddingDim { expected: usize, found: usize },
    #[error("unknown architecture {0:?}")]
    UnknownArchitecture(String),
    #[error("ensemble needs at least one model")]
    EmptyEnsemble,
    #[error("model {index} is incompatible with model 0: {reason}")]
    Incompatible { index: usize, reason: String },
    #[error("record {0} has no offense label")]
    MissingLabel(String),
    #[error("model metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    File(#[from] ModelFileError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "blstm-att")]
    BlstmAttention,
    #[serde(rename = "blstm-bgru")]
    BlstmBgru,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::Cnn,
        Architecture::BlstmAttention,
        Architecture::BlstmBgru,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Architecture::Cnn => "cnn",
            Architecture::BlstmAttention => "blstm-att",
            Architecture::BlstmBgru => "blstm-bgru",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| ModelError::UnknownArchitecture(s.to_string()))
    }
}

/// Layer widths and dropout rates shared by the builders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSizes {
    pub conv_widths: Vec<usize>,
    pub filters: usize,
    pub cnn_hidden: usize,
    pub recurrent_units: usize,
    pub rnn_hidden: usize,
    pub word_dropout: f64,
    pub cnn_dropout: f64,
    pub attention_dropout: f64,
    pub gru_dropout: f64,
}

impl Default for ArchSizes {
    fn default() -> Self {
        Self {
            conv_widths: vec![2, 3, 4],
            filters: 256,
            cnn_hidden: 256,
            recurrent_units: 64,
            rnn_hidden: 128,
            word_dropout: 0.3,
            cnn_dropout: 0.3,
            attention_dropout: 0.2,
            gru_dropout: 0.3,
        }
    }
}

impl ArchSizes {
    /// Small variant for gradient checks: 8 filters, 4 recurrent units.
    pub fn reduced() -> Self {
        Self {
            filters: 8,
            cnn_hidden: 6,
            recurrent_units: 4,
            rnn_hidden: 5,
            ..Self::default()
        }
    }

    /// Same widths with every dropout rate set to zero.
    pub fn without_dropout(mut self) -> Self {
        self.word_dropout = 0.0;
        self.cnn_dropout = 0.0;
        self.attention_dropout = 0.0;
        self.gru_dropout = 0.0;
        self
    }
}

pub fn layer_specs(arch: Architecture, vocab_size: usize, dim: usize, s: &ArchSizes) -> Vec<LayerSpec> {
    let embedding = LayerSpec::Embedding {
        vocab_size,
        dim,
        word_dropout: s.word_dropout,
    };
    let out = LayerSpec::Dense {
        units: 1,
        activation: Activation::Sigmoid,
    };
    let units = s.recurrent_units;
    match arch {
        Architecture::Cnn => vec![
            embedding,
            LayerSpec::Parallel {
                branches: s
                    .conv_widths
                    .iter()
                    .map(|&width| {
                        vec![
                            LayerSpec::Conv1d {
                                width,
                                filters: s.filters,
                            },
                            LayerSpec::MaxOverTime,
                        ]
                    })
                    .collect(),
            },
            LayerSpec::Dropout { rate: s.cnn_dropout },
            LayerSpec::Dense {
                units: s.cnn_hidden,
                activation: Activation::Rectifier,
            },
            out,
        ],
        Architecture::BlstmAttention => vec![
            embedding,
            LayerSpec::BiLstm {
                units,
                dropout: s.attention_dropout,
                output: RecurrentOutput::Sequence,
            },
            LayerSpec::AdditiveAttention { units: 2 * units },
            LayerSpec::Dense {
                units: s.rnn_hidden,
                activation: Activation::Rectifier,
            },
            out,
        ],
        Architecture::BlstmBgru => vec![
            embedding,
            LayerSpec::BiLstm {
                units,
                dropout: s.gru_dropout,
                output: RecurrentOutput::Sequence,
            },
            LayerSpec::BiGru {
                units,
                dropout: s.gru_dropout,
            },
            LayerSpec::Parallel {
                branches: vec![vec![LayerSpec::MaxOverTime], vec![LayerSpec::AvgOverTime]],
            },
            LayerSpec::Dense {
                units: s.rnn_hidden,
                activation: Activation::Rectifier,
            },
            out,
        ],
    }
}

/// Builds `arch` around a `vocab x dim` embedding matrix.
pub fn build_graph<F: Real>(
    arch: Architecture,
    matrix: Tensor<F>,
    sizes: &ArchSizes,
    max_len: usize,
    seed: u64,
) -> Result<ModelGraph<F>, ModelError> {
    let (vocab, dim) = match matrix.shape() {
        [v, d] => (*v, *d),
        other => return Err(NnError::shape("0", format!("embedding matrix shape {other:?}")).into()),
    };
    let mut graph = ModelGraph::new(layer_specs(arch, vocab, dim, sizes), max_len, seed)?;
    graph.set_embedding(matrix)?;
    Ok(graph)
}

fn build_full(arch: Architecture, matrix: Tensor<f32>, seed: u64) -> Result<ModelGraph<f32>, ModelError> {
    let dim = matrix.shape().get(1).copied().unwrap_or(0);
    if dim != EMBEDDING_DIM {
        return Err(ModelError::EmbeddingDim {
            expected: EMBEDDING_DIM,
            found: dim,
        });
    }
    build_graph(arch, matrix, &ArchSizes::default(), MAX_LEN, seed)
}

/// Three parallel convolutions (widths 2, 3, 4, 256 filters each) with
/// max-over-time pooling, dropout and a 256-unit hidden layer.
pub fn build_cnn(matrix: Tensor<f32>, seed: u64) -> Result<ModelGraph<f32>, ModelError> {
    build_full(Architecture::Cnn, matrix, seed)
}

/// Bidirectional LSTM (64 per direction) with additive attention and a
/// 128-unit hidden layer.
pub fn build_blstm_attention(matrix: Tensor<f32>, seed: u64) -> Result<ModelGraph<f32>, ModelError> {
    build_full(Architecture::BlstmAttention, matrix, seed)
}

/// Bidirectional LSTM then bidirectional GRU (64 each), concatenated max and
/// mean pooling, and a 128-unit hidden layer.
pub fn build_blstm_bgru(matrix: Tensor<f32>, seed: u64) -> Result<ModelGraph<f32>, ModelError> {
    build_full(Architecture::BlstmBgru, matrix, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub id: String,
    pub probability: f64,
    pub label: OffenseLabel,
}

pub fn label_for(probability: f64, threshold: f64) -> OffenseLabel {
    if probability >= threshold {
        OffenseLabel::Off
    } else {
        OffenseLabel::Not
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Metadata {
    preprocessing: PreprocessConfig,
    training: Option<TrainConfig>,
    history: Option<TrainHistory>,
}

/// A graph together with everything needed to turn raw tweets into its input.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub architecture: Architecture,
    pub graph: ModelGraph<f32>,
    pub vocabulary: Vocabulary,
    pub preprocessing: PreprocessConfig,
    pub training: Option<TrainConfig>,
    pub history: Option<TrainHistory>,
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let meta = Metadata {
            preprocessing: self.preprocessing.clone(),
            training: self.training.clone(),
            history: self.history.clone(),
        };
        let meta = serde_json::to_value(meta).map_err(|e| ModelError::Metadata(e.to_string()))?;
        save_model(
            path,
            self.architecture.tag(),
            self.vocabulary.words().to_vec(),
            meta,
            &self.graph,
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (header, graph) = load_model(path)?;
        let architecture = header.architecture.parse()?;
        let meta: Metadata = serde_json::from_value(header.metadata)
            .map_err(|e| ModelError::Metadata(e.to_string()))?;
        let vocabulary = Vocabulary::from_words(header.vocabulary);
        let rows = graph.parameters()[0].shape()[0];
        if rows != vocabulary.len() {
            return Err(ModelError::Metadata(format!(
                "vocabulary has {} entries, embedding has {rows} rows",
                vocabulary.len()
            )));
        }
        Ok(Self {
            architecture,
            graph,
            vocabulary,
            preprocessing: meta.preprocessing,
            training: meta.training,
            history: meta.history,
        })
    }

    pub fn preprocessor(&self) -> Result<Preprocessor, ModelError> {
        Ok(self.preprocessing.build()?)
    }

    pub fn encode_tokens(&self, tokens: &[Vec<String>]) -> Vec<EncodedSequence> {
        tokens
            .iter()
            .map(|t| encode(t, &self.vocabulary, self.graph.max_len()))
            .collect()
    }

    /// Infer-mode probabilities for already encoded sequences.
    pub fn probabilities(&self, seqs: &[EncodedSequence]) -> Result<Vec<f32>, ModelError> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(PREDICT_CHUNK) {
            out.extend(self.graph.predict(chunk)?);
        }
        Ok(out)
    }
}

fn tokenize_all(model: &TrainedModel, data: &Dataset) -> Result<Vec<Vec<String>>, ModelError> {
    let pre = model.preprocessor()?;
    Ok(data.records.iter().map(|r| pre.process(&r.text)).collect())
}

pub fn predict(model: &TrainedModel, data: &Dataset, threshold: f64) -> Result<Vec<PredictionResult>, ModelError> {
    ensemble_predict(std::slice::from_ref(model), data, threshold)
}

fn check_compatible(models: &[TrainedModel]) -> Result<(), ModelError> {
    let first = &models[0];
    for (index, m) in models.iter().enumerate().skip(1) {
        let reason = if m.graph.max_len() != first.graph.max_len() {
            "sequence length differs"
        } else if m.vocabulary != first.vocabulary {
            "vocabulary differs"
        } else if m.preprocessing != first.preprocessing {
            "preprocessing differs"
        } else {
            continue;
        };
        return Err(ModelError::Incompatible {
            index,
            reason: reason.to_string(),
        });
    }
    Ok(())
}

/// Arithmetic mean of member probabilities, summed in `f64` in ascending
/// order so the result does not depend on member order.
pub fn mean_probability(members: &mut [f64]) -> f64 {
    members.sort_by(f64::total_cmp);
    members.iter().sum::<f64>() / members.len() as f64
}

pub fn ensemble_predict(
    models: &[TrainedModel],
    data: &Dataset,
    threshold: f64,
) -> Result<Vec<PredictionResult>, ModelError> {
    if models.is_empty() {
        return Err(ModelError::EmptyEnsemble);
    }
    check_compatible(models)?;
    let seqs = models[0].encode_tokens(&tokenize_all(&models[0], data)?);
    let member_probs = models
        .iter()
        .map(|m| m.probabilities(&seqs))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(data
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut ps: Vec<f64> = member_probs.iter().map(|p| p[i] as f64).collect();
            let probability = mean_probability(&mut ps);
            PredictionResult {
                id: r.id.clone(),
                probability,
                label: label_for(probability, threshold),
            }
        })
        .collect())
}

pub fn write_predictions<W: Write>(mut w: W, results: &[PredictionResult]) -> std::io::Result<()> {
    for r in results {
        writeln!(w, "{}\t{:.6}\t{}", r.id, r.probability, r.label)?;
    }
    w.flush()
}

/// Everything besides the data that determines a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingOptions {
    pub architecture: Architecture,
    pub sizes: ArchSizes,
    pub max_len: usize,
    pub min_count: usize,
    pub train: TrainConfig,
}

impl TrainingOptions {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            sizes: ArchSizes::default(),
            max_len: MAX_LEN,
            min_count: 1,
            train: TrainConfig::default(),
        }
    }
}

fn labeled(seqs: Vec<EncodedSequence>, data: &Dataset) -> Result<Vec<LabeledSequence>, ModelError> {
    seqs.into_iter()
        .zip(&data.records)
        .map(|(sequence, r)| match r.label_a {
            Some(l) => Ok(LabeledSequence {
                sequence,
                label: l == OffenseLabel::Off,
            }),
            None => Err(ModelError::MissingLabel(r.id.clone())),
        })
        .collect()
}

/// Preprocesses both splits, builds the vocabulary from the training split,
/// initializes the embedding matrix and trains with early stopping.
pub fn train_model(
    train_set: &Dataset,
    val_set: &Dataset,
    embeddings: &EmbeddingTable,
    preprocessing: PreprocessConfig,
    opts: &TrainingOptions,
) -> Result<(TrainedModel, TrainHistory), ModelError> {
    let pre = preprocessing.build()?;
    let process = |d: &Dataset| -> Vec<Vec<String>> { d.records.iter().map(|r| pre.process(&r.text)).collect() };
    let train_tokens = process(train_set);
    let vocabulary = build_vocabulary(&train_tokens, opts.min_count);
    let seed = opts.train.seed;
    let matrix = build_embedding_matrix(&vocabulary, embeddings, seed);
    let mut graph = build_graph(opts.architecture, matrix, &opts.sizes, opts.max_len, seed)?;
    let enc = |tokens: &[Vec<String>]| -> Vec<EncodedSequence> {
        tokens.iter().map(|t| encode(t, &vocabulary, opts.max_len)).collect()
    };
    let train_data = labeled(enc(&train_tokens), train_set)?;
    let val_data = labeled(enc(&process(val_set)), val_set)?;
    log::info!(
        "training {} on {} examples ({} validation), vocabulary {}",
        opts.architecture,
        train_data.len(),
        val_data.len(),
        vocabulary.len()
    );
    let history = train(&mut graph, &train_data, &val_data, &opts.train)?;
    let model = TrainedModel {
        architecture: opts.architecture,
        graph,
        vocabulary,
        preprocessing,
        training: Some(opts.train.clone()),
        history: Some(history.clone()),
    };
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Shape;

    fn matrix(v: usize, d: usize) -> Tensor<f32> {
        Tensor::from_vec(vec![v, d], (0..v * d).map(|i| (i % 7) as f32 * 0.01).collect())
    }

    #[test]
    fn cnn_shapes() {
        let g = build_cnn(matrix(10, 200), 1).unwrap();
        assert_eq!(g.output_shapes()[1], Shape::Vector { width: 768 });
        assert_eq!(g.output_shapes().last(), Some(&Shape::Vector { width: 1 }));
        let p = g.parameters();
        assert_eq!(p[1].value.len() + p[2].value.len(), 2 * 200 * 256 + 256);
    }

    #[test]
    fn recurrent_shapes() {
        let g = build_blstm_attention(matrix(10, 200), 1).unwrap();
        assert_eq!(g.output_shapes()[2], Shape::Vector { width: 128 });
        let g = build_blstm_bgru(matrix(10, 200), 1).unwrap();
        assert_eq!(g.output_shapes()[3], Shape::Vector { width: 256 });
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        assert!(matches!(
            build_cnn(matrix(10, 50), 1),
            Err(ModelError::EmbeddingDim { expected: 200, found: 50 })
        ));
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(label_for(0.73, 0.5), OffenseLabel::Off);
        assert_eq!(label_for(0.5, 0.5), OffenseLabel::Off);
        assert_eq!(label_for(0.4999999, 0.5), OffenseLabel::Not);
    }

    #[test]
    fn ensemble_mean() {
        let p = mean_probability(&mut [0.9, 0.2, 0.4]);
        assert_eq!(p, 0.5);
        assert_eq!(label_for(p, DEFAULT_THRESHOLD), OffenseLabel::Off);
        let p = 0.3f32 as f64;
        assert_eq!(mean_probability(&mut [p, p, p]), p);
    }

    #[test]
    fn architecture_tags_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.tag().parse::<Architecture>().unwrap(), a);
        }
        assert!("rnn".parse::<Architecture>().is_err());
    }
}
