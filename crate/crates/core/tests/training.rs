use offenseval::embeddings::EncodedSequence;
use offenseval::models::{build_graph, ArchSizes, Architecture};
use offenseval::nncore::{
    evaluate_loss, optimizer_step, train, AdamConfig, AdamState, LabeledSequence, ModelGraph,
    StopReason, Tensor, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LEN: usize = 10;

fn data(seed: u64, n: usize) -> Vec<LabeledSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.gen_range(1..=LEN);
            let mut idx: Vec<u32> = (0..k).map(|_| rng.gen_range(1..12)).collect();
            let label = idx.iter().filter(|&&i| i < 6).count() * 2 > k;
            idx.resize(LEN, 0);
            LabeledSequence { sequence: EncodedSequence::new(idx, k), label }
        })
        .collect()
}

fn graph(arch: Architecture, seed: u64) -> ModelGraph<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (vocab, dim) = (12, 6);
    let values = (0..vocab * dim)
        .map(|k| if k < dim { 0.0 } else { rng.gen_range(-0.5..0.5) })
        .collect();
    build_graph(arch, Tensor::from_vec(vec![vocab, dim], values), &ArchSizes::reduced(), LEN, seed).unwrap()
}

fn snapshot(g: &ModelGraph<f32>) -> Vec<Vec<f32>> {
    g.parameters().iter().map(|p| p.value.values().to_vec()).collect()
}

#[test]
fn identical_runs_give_identical_weights() {
    let (tr, va) = (data(1, 40), data(2, 12));
    let cfg = TrainConfig { max_epochs: 4, batch_size: 8, ..TrainConfig::default() };
    for arch in Architecture::ALL {
        let (mut a, mut b) = (graph(arch, 3), graph(arch, 3));
        let ha = train(&mut a, &tr, &va, &cfg).unwrap();
        let hb = train(&mut b, &tr, &va, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(snapshot(&a), snapshot(&b), "{arch}");
    }
}

#[test]
fn one_epoch_budget() {
    let cfg = TrainConfig { max_epochs: 1, ..TrainConfig::default() };
    let mut g = graph(Architecture::Cnn, 4);
    let h = train(&mut g, &data(5, 20), &data(6, 6), &cfg).unwrap();
    assert_eq!(h.epochs.len(), 1);
    assert_eq!(h.stop, StopReason::MaxEpochs);
}

#[test]
fn best_epoch_weights_are_restored() {
    let (tr, va) = (data(7, 48), data(8, 16));
    let cfg = TrainConfig { max_epochs: 12, patience: 2, learning_rate: 0.05, batch_size: 4, ..TrainConfig::default() };
    for arch in Architecture::ALL {
        let mut g = graph(arch, 9);
        let h = train(&mut g, &tr, &va, &cfg).unwrap();
        let best = h.best();
        assert!(h.epochs.iter().all(|e| e.val_loss >= best.val_loss));
        let restored = evaluate_loss(&g, &va).unwrap();
        assert!((restored - best.val_loss).abs() < 1e-9, "{arch}: {restored} vs {}", best.val_loss);
    }
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut g = graph(Architecture::BlstmBgru, 10);
    let before = snapshot(&g);
    let mut state = AdamState::new(&g.parameters());
    optimizer_step(g.parameters_mut(), &mut state, &AdamConfig::default());
    assert_eq!(snapshot(&g), before);
}
