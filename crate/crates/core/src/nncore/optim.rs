use serde::{Deserialize, Serialize};

use super::{Parameter, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &[&Parameter<F>]) -> Self {
        let zeros = |p: &&Parameter<F>| vec![F::zero(); p.value.len()];
        Self {
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }
}

/// One bias-corrected Adam update from the gradients stored in `params`.
pub fn optimizer_step<F: Real>(params: Vec<&mut Parameter<F>>, state: &mut AdamState<F>, cfg: &AdamConfig) {
    assert_eq!(params.len(), state.m.len(), "optimizer state does not match parameters");
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (F::lit(cfg.beta1), F::lit(cfg.beta2));
    let c1 = F::lit(1.0 - cfg.beta1.powf(t));
    let c2 = F::lit(1.0 - cfg.beta2.powf(t));
    let lr = F::lit(cfg.learning_rate);
    let eps = F::lit(cfg.epsilon);
    for ((p, m), v) in params.into_iter().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.grad.values();
        let value = p.value.values_mut();
        for k in 0..grad.len() {
            let g = grad[k];
            m[k] = b1 * m[k] + (F::one() - b1) * g;
            v[k] = b2 * v[k] + (F::one() - b2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            value[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Tensor;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Parameter::new(Tensor::from_vec(vec![2], vec![1.0f64, -1.0]));
        p.grad.values_mut().copy_from_slice(&[0.5, -2.0]);
        let mut state = AdamState::new(&[&p]);
        optimizer_step(vec![&mut p], &mut state, &AdamConfig::default());
        assert!((p.value.values()[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p.value.values()[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn matches_reference_recurrence() {
        let cfg = AdamConfig::default();
        let mut p = Parameter::new(Tensor::from_vec(vec![1], vec![0.3f64]));
        let mut state = AdamState::new(&[&p]);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.3f64);
        for t in 1..=5 {
            let g = 2.0 * x;
            p.grad.values_mut()[0] = g;
            optimizer_step(vec![&mut p], &mut state, &cfg);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 1e-3 * mh / (vh.sqrt() + 1e-8);
            assert!((p.value.values()[0] - x).abs() < 1e-12);
        }
    }
}
