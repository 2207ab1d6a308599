//! Analytic gradients against central finite differences in f64.

mod common;

use common::{jitter, max_relative_error, random_batch, seq, TOLERANCE};
use offenseval::models::{build_graph, ArchSizes, Architecture};
use offenseval::nncore::{bce_grad, Activation, LayerSpec, Mode, ModelGraph, RecurrentOutput, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(specs: Vec<LayerSpec>, len: usize, seed: u64) {
    let vocab = match specs[0] {
        LayerSpec::Embedding { vocab_size, .. } => vocab_size as u32,
        _ => unreachable!(),
    };
    let mut g = ModelGraph::<f64>::new(specs, len, seed).unwrap();
    assert!(g.num_parameters() <= 1000, "{} parameters", g.num_parameters());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    jitter(&mut g, &mut rng);
    let (batch, y) = random_batch(&mut rng, 5, len, vocab);
    let err = max_relative_error(&mut g, &batch, &y, seed);
    assert!(err < TOLERANCE, "relative error {err:e}");
}

fn embedding(vocab_size: usize, dim: usize, word_dropout: f64) -> LayerSpec {
    LayerSpec::Embedding { vocab_size, dim, word_dropout }
}

fn dense(units: usize, activation: Activation) -> LayerSpec {
    LayerSpec::Dense { units, activation }
}

fn output() -> LayerSpec {
    dense(1, Activation::Sigmoid)
}

#[test]
fn logistic_regression_gradient_is_p_minus_y_times_x() {
    let mut g = ModelGraph::<f64>::new(
        vec![embedding(3, 1, 0.0), LayerSpec::AvgOverTime, output()],
        1,
        3,
    )
    .unwrap();
    let x = g.parameters()[0].value.values()[2];
    let w = g.parameters()[1].value.values()[0];
    let b = g.parameters()[2].value.values()[0];
    let batch = [seq(&[2], 1)];
    let pass = g.forward(&batch, Mode::Train, 0).unwrap();
    let p = 1.0 / (1.0 + (-(w * x + b)).exp());
    assert!((pass.probabilities[0] - p).abs() < 1e-12);
    let y = [1.0];
    g.backward(&pass, &bce_grad(&pass.probabilities, &y)).unwrap();
    assert!((g.parameters()[1].grad.values()[0] - (p - 1.0) * x).abs() < 1e-12);
    assert!((g.parameters()[2].grad.values()[0] - (p - 1.0)).abs() < 1e-12);
}

#[test]
fn dense_stack() {
    check(
        vec![
            embedding(6, 3, 0.0),
            LayerSpec::AvgOverTime,
            dense(4, Activation::Rectifier),
            dense(3, Activation::Identity),
            dense(2, Activation::Sigmoid),
            output(),
        ],
        5,
        1,
    );
}

#[test]
fn convolution_with_max_pooling() {
    for (width, seed) in [(2, 2), (3, 3), (4, 4)] {
        check(
            vec![
                embedding(7, 3, 0.0),
                LayerSpec::Conv1d { width, filters: 4 },
                LayerSpec::MaxOverTime,
                output(),
            ],
            6,
            seed,
        );
    }
}

#[test]
fn convolution_with_average_pooling() {
    check(
        vec![
            embedding(7, 2, 0.0),
            LayerSpec::Conv1d { width: 3, filters: 3 },
            LayerSpec::AvgOverTime,
            output(),
        ],
        5,
        5,
    );
}

#[test]
fn bilstm_both_output_modes() {
    check(
        vec![
            embedding(6, 3, 0.0),
            LayerSpec::BiLstm { units: 3, dropout: 0.0, output: RecurrentOutput::Sequence },
            LayerSpec::AvgOverTime,
            output(),
        ],
        5,
        6,
    );
    check(
        vec![
            embedding(6, 3, 0.0),
            LayerSpec::BiLstm { units: 3, dropout: 0.0, output: RecurrentOutput::Final },
            output(),
        ],
        5,
        7,
    );
}

#[test]
fn bigru() {
    check(
        vec![
            embedding(6, 3, 0.0),
            LayerSpec::BiGru { units: 3, dropout: 0.0 },
            LayerSpec::MaxOverTime,
            output(),
        ],
        5,
        8,
    );
}

#[test]
fn additive_attention() {
    check(
        vec![embedding(6, 4, 0.0), LayerSpec::AdditiveAttention { units: 3 }, output()],
        6,
        9,
    );
}

#[test]
fn dropout_layers_in_train_mode() {
    check(
        vec![
            embedding(6, 3, 0.3),
            LayerSpec::BiLstm { units: 2, dropout: 0.4, output: RecurrentOutput::Sequence },
            LayerSpec::BiGru { units: 2, dropout: 0.3 },
            LayerSpec::AvgOverTime,
            LayerSpec::Dropout { rate: 0.5 },
            dense(3, Activation::Rectifier),
            output(),
        ],
        5,
        10,
    );
}

#[test]
fn parallel_branches() {
    check(
        vec![
            embedding(6, 3, 0.0),
            LayerSpec::Parallel {
                branches: vec![
                    vec![LayerSpec::Conv1d { width: 2, filters: 2 }, LayerSpec::MaxOverTime],
                    vec![LayerSpec::AvgOverTime],
                    vec![LayerSpec::AdditiveAttention { units: 2 }],
                ],
            },
            output(),
        ],
        5,
        11,
    );
}

#[test]
fn reduced_architectures_end_to_end() {
    for (i, arch) in Architecture::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + i as u64);
        let (vocab, dim, len) = (8, 4, 7);
        let values = (0..vocab * dim)
            .map(|k| if k < dim { 0.0 } else { rng.gen_range(-0.5..0.5) })
            .collect();
        let matrix = Tensor::from_vec(vec![vocab, dim], values);
        let mut g = build_graph(arch, matrix, &ArchSizes::reduced(), len, 40 + i as u64).unwrap();
        assert!(g.num_parameters() <= 1000, "{arch}: {}", g.num_parameters());
        jitter(&mut g, &mut rng);
        let (batch, y) = random_batch(&mut rng, 4, len, vocab as u32);
        let err = max_relative_error(&mut g, &batch, &y, 77);
        assert!(err < TOLERANCE, "{arch}: relative error {err:e}");
    }
}

fn random_stack(kind: usize, dim: usize, units: usize, rate: f64) -> Vec<LayerSpec> {
    let head = embedding(9, dim, rate);
    let middle = match kind {
        0 => vec![LayerSpec::Conv1d { width: 2, filters: units }, LayerSpec::MaxOverTime],
        1 => vec![
            LayerSpec::BiLstm { units, dropout: rate, output: RecurrentOutput::Sequence },
            LayerSpec::AdditiveAttention { units },
        ],
        2 => vec![LayerSpec::BiGru { units, dropout: rate }, LayerSpec::AvgOverTime],
        _ => vec![
            LayerSpec::BiLstm { units, dropout: rate, output: RecurrentOutput::Final },
            LayerSpec::Dropout { rate },
            dense(units, Activation::Rectifier),
        ],
    };
    let mut specs = vec![head];
    specs.extend(middle);
    specs.push(output());
    specs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_configurations_match_finite_differences(
        kind in 0usize..4,
        dim in 1usize..4,
        units in 1usize..4,
        rate in prop_oneof![Just(0.0), 0.1f64..0.5],
        len in 2usize..6,
        seed in any::<u64>(),
    ) {
        check(random_stack(kind, dim, units, rate), len, seed);
    }

    #[test]
    fn attention_weights_form_a_masked_distribution(
        valid in 0usize..9,
        seed in any::<u64>(),
    ) {
        let g = ModelGraph::<f64>::new(
            vec![
                embedding(5, 3, 0.0),
                LayerSpec::BiLstm { units: 2, dropout: 0.0, output: RecurrentOutput::Sequence },
                LayerSpec::AdditiveAttention { units: 4 },
                output(),
            ],
            8,
            seed,
        ).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<u32> = (0..valid).map(|_| rng.gen_range(1..5)).collect();
        let w = g.attention_weights(&seq(&idx, 8)).unwrap().unwrap();
        let live = valid.max(1);
        prop_assert!(w[..live].iter().all(|&a| a >= 0.0));
        prop_assert!((w[..live].iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w[live..].iter().all(|&a| a == 0.0));
    }

    #[test]
    fn conv_output_length(len in 4usize..40, width in 2usize..5) {
        let g = ModelGraph::<f32>::new(
            vec![embedding(4, 2, 0.0), LayerSpec::Conv1d { width, filters: 2 }, LayerSpec::MaxOverTime, output()],
            len,
            0,
        ).unwrap();
        prop_assert_eq!(
            g.output_shapes()[1],
            offenseval::nncore::Shape::Sequence { steps: len - width + 1, width: 2 }
        );
    }

    #[test]
    fn sigmoid_outputs_stay_open(scale in 1.0f32..1e4, seed in any::<u64>(), kind in 0usize..4) {
        let mut g = ModelGraph::<f32>::new(random_stack(kind, 3, 3, 0.0), 6, seed).unwrap();
        for p in g.parameters_mut() {
            p.value.values_mut().iter_mut().for_each(|x| *x *= scale);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (batch, _) = random_batch(&mut rng, 6, 6, 9);
        for p in g.predict(&batch).unwrap() {
            prop_assert!(p > 0.0 && p < 1.0, "{p}");
        }
    }

    #[test]
    fn inference_is_pure_and_batch_independent(seed in any::<u64>(), kind in 0usize..4) {
        let g = ModelGraph::<f32>::new(random_stack(kind, 3, 3, 0.3), 6, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (batch, _) = random_batch(&mut rng, 9, 6, 9);
        let a = g.predict(&batch).unwrap();
        let b = g.predict(&batch).unwrap();
        prop_assert_eq!(&a, &b);
        for (s, &p) in batch.iter().zip(&a) {
            prop_assert_eq!(g.predict(std::slice::from_ref(s)).unwrap()[0].to_bits(), p.to_bits());
        }
    }
}
