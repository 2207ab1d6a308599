use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{bce_grad, bce_loss};
use super::ops::mix_seed;
use super::optim::{optimizer_step, AdamConfig, AdamState};
use super::{Mode, ModelGraph, NnError, Real, Tensor};
use crate::embeddings::EncodedSequence;

/// Examples per forward pass when scoring the validation set.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            patience: 3,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config(format!("learning rate {}", self.learning_rate)));
        }
        for (name, v) in [
            ("batch size", self.batch_size),
            ("max epochs", self.max_epochs),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(NnError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSequence {
    pub sequence: EncodedSequence,
    pub label: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub stop: StopReason,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Waiting,
    Stop,
}

/// Validation-loss monitor. Only a strict decrease counts as improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> Verdict {
        if loss < self.best {
            self.best = loss;
            self.wait = 0;
            Verdict::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Waiting
            }
        }
    }
}

fn snapshot<F: Real>(graph: &ModelGraph<F>) -> Vec<Tensor<F>> {
    graph.parameters().iter().map(|p| p.value.clone()).collect()
}

fn restore<F: Real>(graph: &mut ModelGraph<F>, saved: Vec<Tensor<F>>) {
    for (p, v) in graph.parameters_mut().into_iter().zip(saved) {
        p.value = v;
    }
}

fn targets<F: Real>(items: &[&LabeledSequence]) -> Vec<F> {
    items
        .iter()
        .map(|x| if x.label { F::one() } else { F::zero() })
        .collect()
}

/// Mean infer-mode loss over `data`.
pub fn evaluate_loss<F: Real>(graph: &ModelGraph<F>, data: &[LabeledSequence]) -> Result<f64, NnError> {
    let mut total = 0.0;
    for chunk in data.chunks(EVAL_CHUNK) {
        let seqs: Vec<EncodedSequence> = chunk.iter().map(|x| x.sequence.clone()).collect();
        let p = graph.predict(&seqs)?;
        let refs: Vec<&LabeledSequence> = chunk.iter().collect();
        total += bce_loss(&p, &targets(&refs)).as_f64() * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Mini-batch Adam training with early stopping on validation loss. On
/// return the graph holds the parameters of the best validation epoch.
pub fn train<F: Real>(
    graph: &mut ModelGraph<F>,
    train: &[LabeledSequence],
    val: &[LabeledSequence],
    cfg: &TrainConfig,
) -> Result<TrainHistory, NnError> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(NnError::EmptyTrainingSet);
    }
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&graph.parameters());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best = (0, snapshot(graph));
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&LabeledSequence> = idx.iter().map(|&i| &train[i]).collect();
            let seqs: Vec<EncodedSequence> = items.iter().map(|x| x.sequence.clone()).collect();
            let y = targets::<F>(&items);
            let batch_seed = mix_seed(mix_seed(cfg.seed, epoch as u64), b as u64);
            let pass = graph.forward(&seqs, Mode::Train, batch_seed)?;
            let loss = bce_loss(&pass.probabilities, &y);
            if !loss.is_finite() {
                return Err(NnError::NonFinite { epoch, batch: b + 1 });
            }
            loss_sum += loss.as_f64() * items.len() as f64;
            let grad = bce_grad(&pass.probabilities, &y);
            graph.backward(&pass, &grad)?;
            optimizer_step(graph.parameters_mut(), &mut state, &adam);
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = evaluate_loss(graph, val)?;
        if !val_loss.is_finite() {
            return Err(NnError::NonFinite { epoch, batch: 0 });
        }
        log::info!("epoch {epoch}: train loss {train_loss:.4}, val loss {val_loss:.4}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match stopper.observe(val_loss) {
            Verdict::Improved => best = (epoch, snapshot(graph)),
            Verdict::Waiting => {}
            Verdict::Stop => {
                stop = StopReason::Patience;
                break;
            }
        }
    }
    let (best_epoch, weights) = best;
    restore(graph, weights);
    log::info!("restored weights of epoch {best_epoch}");
    Ok(TrainHistory {
        epochs,
        best_epoch,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopping_rule_hand_trace() {
        let mut s = EarlyStopping::new(2);
        let verdicts: Vec<Verdict> = [0.7, 0.6, 0.65, 0.66].iter().map(|&l| s.observe(l)).collect();
        assert_eq!(
            verdicts,
            vec![Verdict::Improved, Verdict::Improved, Verdict::Waiting, Verdict::Stop]
        );
    }

    #[test]
    fn equal_loss_is_not_improvement() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(0.5), Verdict::Improved);
        assert_eq!(s.observe(0.5), Verdict::Stop);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(NnError::Config(_))));
        let cfg = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
