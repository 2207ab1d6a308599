//! Finite-difference helpers shared by the gradient and acceptance tests.

#![allow(dead_code)]

use offenseval::embeddings::EncodedSequence;
use offenseval::nncore::{bce_grad, bce_loss, Mode, ModelGraph};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
/// Central differences carry roughly 1e-11 of rounding error, so tensors
/// with smaller gradients are compared against this floor instead.
pub const SCALE_FLOOR: f64 = 1e-4;

pub fn seq(indices: &[u32], len: usize) -> EncodedSequence {
    let mut v = indices.to_vec();
    v.resize(len, 0);
    EncodedSequence::new(v, indices.len())
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, len: usize, vocab: u32) -> (Vec<EncodedSequence>, Vec<f64>) {
    let batch = (0..n)
        .map(|_| {
            let k = rng.gen_range(0..=len);
            let idx: Vec<u32> = (0..k).map(|_| rng.gen_range(1..vocab)).collect();
            seq(&idx, len)
        })
        .collect();
    let labels = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    (batch, labels)
}

pub fn loss(g: &ModelGraph<f64>, batch: &[EncodedSequence], y: &[f64], seed: u64) -> f64 {
    bce_loss(&g.forward(batch, Mode::Train, seed).unwrap().probabilities, y)
}

/// Largest per-tensor relative error `|a - n| / max(|a|, |n|, floor)`
/// (Euclidean norms) over all parameters.
pub fn max_relative_error(g: &mut ModelGraph<f64>, batch: &[EncodedSequence], y: &[f64], seed: u64) -> f64 {
    let pass = g.forward(batch, Mode::Train, seed).unwrap();
    let dl = bce_grad(&pass.probabilities, y);
    g.backward(&pass, &dl).unwrap();
    let analytic: Vec<Vec<f64>> = g.parameters().iter().map(|p| p.grad.values().to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (pi, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = g.parameters()[pi].value.values()[k];
            g.parameters_mut()[pi].value.values_mut()[k] = orig + STEP;
            let up = loss(g, batch, y, seed);
            g.parameters_mut()[pi].value.values_mut()[k] = orig - STEP;
            let down = loss(g, batch, y, seed);
            g.parameters_mut()[pi].value.values_mut()[k] = orig;
            *slot = (up - down) / (2.0 * STEP);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
        let err = norm(&diff) / norm(a).max(norm(&numeric)).max(SCALE_FLOOR);
        assert!(err.is_finite());
        worst = worst.max(err);
    }
    worst
}

/// Moves every non-embedding parameter off its initial value so zero biases
/// do not put rectifiers exactly on their kink.
pub fn jitter(g: &mut ModelGraph<f64>, rng: &mut ChaCha8Rng) {
    for p in g.parameters_mut().into_iter().skip(1) {
        p.value.values_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
    }
}

