use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ops::{affine, axpy, dot, matvec_backward, mix_seed, sigmoid};
use super::recurrent::{
    gru_backward, gru_forward, lstm_backward, lstm_forward, CellGrads, CellWeights, GruStep,
    LstmStep,
};
use super::spec::{Activation, LayerSpec, RecurrentOutput, Shape};
use super::{NnError, Parameter, Real, Tensor};
use crate::embeddings::{EncodedSequence, PAD_INDEX};

/// Sigmoid outputs of the final layer are clamped to `[ε, 1-ε]` so they
/// stay strictly inside (0, 1) even in single precision.
pub const OUTPUT_EPSILON: f64 = 1e-7;

/// Examples per gradient accumulator during parallel backward passes. Fixed
/// so the summation order, and therefore the result, never depends on the
/// thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Sequence activations of one example. Only the first `valid` rows are
/// stored; rows past it are padding and implicitly zero.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Seq<F> {
    data: Vec<F>,
    steps: usize,
    width: usize,
    valid: usize,
}

impl<F: Real> Seq<F> {
    fn zeros_like(&self) -> Self {
        Self {
            data: vec![F::zero(); self.data.len()],
            ..*self
        }
    }

    fn row(&self, t: usize) -> &[F] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    fn row_mut(&mut self, t: usize) -> &mut [F] {
        &mut self.data[t * self.width..(t + 1) * self.width]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Value<F> {
    Seq(Seq<F>),
    Vector(Vec<F>),
}

impl<F: Real> Value<F> {
    fn into_seq(self) -> Seq<F> {
        match self {
            Value::Seq(s) => s,
            Value::Vector(_) => unreachable!("shape checked at construction"),
        }
    }

    fn into_vector(self) -> Vec<F> {
        match self {
            Value::Vector(v) => v,
            Value::Seq(_) => unreachable!("shape checked at construction"),
        }
    }

    fn data_mut(&mut self) -> &mut [F] {
        match self {
            Value::Seq(s) => &mut s.data,
            Value::Vector(v) => v,
        }
    }

    fn data(&self) -> &[F] {
        match self {
            Value::Seq(s) => &s.data,
            Value::Vector(v) => v,
        }
    }
}

/// Cached forward state of one layer for one example.
#[derive(Clone, Debug)]
pub(crate) enum Trace<F> {
    Embedding {
        indices: Vec<u32>,
        scales: Vec<F>,
    },
    Conv {
        input: Seq<F>,
        output: Seq<F>,
    },
    Max {
        argmax: Vec<usize>,
        like: Seq<F>,
    },
    Avg {
        like: Seq<F>,
    },
    BiLstm {
        like: Seq<F>,
        masks: [Option<Vec<F>>; 2],
        dirs: [Vec<LstmStep<F>>; 2],
    },
    BiGru {
        like: Seq<F>,
        masks: [Option<Vec<F>>; 2],
        dirs: [Vec<GruStep<F>>; 2],
    },
    Attention {
        input: Seq<F>,
        projected: Vec<F>,
        weights: Vec<F>,
    },
    Dense {
        input: Vec<F>,
        output: Vec<F>,
    },
    Dropout {
        mask: Option<Vec<F>>,
    },
    Parallel {
        branches: Vec<Vec<Trace<F>>>,
        widths: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layer<F> {
    spec: LayerSpec,
    params: Vec<Parameter<F>>,
    branches: Vec<Vec<Layer<F>>>,
    /// Index of this layer's first parameter in traversal order.
    slot: usize,
}

/// A stack of layers with parameters, mapping an index sequence to one
/// probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph<F> {
    layers: Vec<Layer<F>>,
    max_len: usize,
    shapes: Vec<Shape>,
}

/// Output of [`ModelGraph::forward`]. Train-mode passes keep the cached
/// activations needed by [`ModelGraph::backward`].
#[derive(Debug)]
pub struct ForwardPass<F> {
    pub probabilities: Vec<F>,
    traces: Option<Vec<Vec<Trace<F>>>>,
}

impl<F> ForwardPass<F> {
    pub fn has_cache(&self) -> bool {
        self.traces.is_some()
    }
}

struct Ctx {
    train: bool,
    rng: ChaCha8Rng,
}

fn glorot<F: Real>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let values = (0..n).map(|_| F::lit(rng.gen_range(-limit..=limit))).collect();
    Tensor::from_vec(shape, values)
}

fn zeros<F: Real>(n: usize) -> Parameter<F> {
    Parameter::new(Tensor::zeros(vec![n]))
}

fn check_rate(rate: f64, path: &str) -> Result<(), NnError> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(NnError::shape(path, format!("rate {rate} outside [0, 1)")))
    }
}

fn check_positive(n: usize, what: &str, path: &str) -> Result<(), NnError> {
    if n > 0 {
        Ok(())
    } else {
        Err(NnError::shape(path, format!("{what} must be positive")))
    }
}

fn recurrent_cell<F: Real>(
    rng: &mut ChaCha8Rng,
    gates: usize,
    units: usize,
    input: usize,
    lstm: bool,
) -> [Parameter<F>; 3] {
    let w = glorot(rng, vec![gates * units, input], input, gates * units);
    let u = glorot(rng, vec![gates * units, units], units, gates * units);
    let mut b = Tensor::zeros(vec![gates * units]);
    if lstm {
        b.values_mut()[units..2 * units].fill(F::one());
    }
    [Parameter::new(w), Parameter::new(u), Parameter::new(b)]
}

/// Validates `specs` against the incoming shape and initializes parameters.
fn build_layers<F: Real>(
    specs: &[LayerSpec],
    mut shape: Shape,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    shapes: &mut Vec<Shape>,
) -> Result<(Vec<Layer<F>>, Shape), NnError> {
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let path = format!("{prefix}{i}");
        let mismatch = |expected: &str| {
            NnError::shape(&path, format!("{} expects {expected}, got {shape:?}", spec.name()))
        };
        let mut branches = Vec::new();
        let (params, out) = match (spec, shape) {
            (LayerSpec::Embedding { vocab_size, dim, word_dropout }, Shape::Indices { len }) => {
                check_positive(*vocab_size, "vocab_size", &path)?;
                check_positive(*dim, "dim", &path)?;
                check_rate(*word_dropout, &path)?;
                let values = (0..vocab_size * dim)
                    .map(|k| {
                        if k < *dim {
                            F::zero()
                        } else {
                            F::lit(rng.gen_range(-0.05..=0.05))
                        }
                    })
                    .collect();
                let table = Tensor::from_vec(vec![*vocab_size, *dim], values);
                (
                    vec![Parameter::new(table).sparse_rows()],
                    Shape::Sequence { steps: len, width: *dim },
                )
            }
            (LayerSpec::Embedding { .. }, _) => return Err(mismatch("an index sequence")),
            (_, Shape::Indices { .. }) => {
                return Err(NnError::shape(&path, "first layer must be an embedding"))
            }
            (LayerSpec::Conv1d { width, filters }, Shape::Sequence { steps, width: d }) => {
                check_positive(*width, "width", &path)?;
                check_positive(*filters, "filters", &path)?;
                if steps < *width {
                    return Err(NnError::shape(
                        &path,
                        format!("conv width {width} exceeds sequence length {steps}"),
                    ));
                }
                let kernel = glorot(rng, vec![*filters, width * d], width * d, width * filters);
                (
                    vec![Parameter::new(kernel), zeros(*filters)],
                    Shape::Sequence { steps: steps - width + 1, width: *filters },
                )
            }
            (LayerSpec::MaxOverTime | LayerSpec::AvgOverTime, Shape::Sequence { width, .. }) => {
                (Vec::new(), Shape::Vector { width })
            }
            (LayerSpec::BiLstm { units, dropout, output }, Shape::Sequence { steps, width }) => {
                check_positive(*units, "units", &path)?;
                check_rate(*dropout, &path)?;
                let mut params = Vec::new();
                for _ in 0..2 {
                    params.extend(recurrent_cell(rng, 4, *units, width, true));
                }
                let out = match output {
                    RecurrentOutput::Sequence => Shape::Sequence { steps, width: 2 * units },
                    RecurrentOutput::Final => Shape::Vector { width: 2 * units },
                };
                (params, out)
            }
            (LayerSpec::BiGru { units, dropout }, Shape::Sequence { steps, width }) => {
                check_positive(*units, "units", &path)?;
                check_rate(*dropout, &path)?;
                let mut params = Vec::new();
                for _ in 0..2 {
                    params.extend(recurrent_cell(rng, 3, *units, width, false));
                }
                (params, Shape::Sequence { steps, width: 2 * units })
            }
            (LayerSpec::AdditiveAttention { units }, Shape::Sequence { width, .. }) => {
                check_positive(*units, "units", &path)?;
                let proj = glorot(rng, vec![*units, width], width, *units);
                let score = glorot(rng, vec![*units], *units, 1);
                (
                    vec![Parameter::new(proj), zeros(*units), Parameter::new(score)],
                    Shape::Vector { width },
                )
            }
            (LayerSpec::Dense { units, .. }, Shape::Vector { width }) => {
                check_positive(*units, "units", &path)?;
                let w = glorot(rng, vec![*units, width], width, *units);
                (vec![Parameter::new(w), zeros(*units)], Shape::Vector { width: *units })
            }
            (LayerSpec::Dropout { rate }, s) => {
                check_rate(*rate, &path)?;
                (Vec::new(), s)
            }
            (LayerSpec::Parallel { branches: specs }, s) => {
                if specs.is_empty() {
                    return Err(NnError::shape(&path, "parallel layer needs a branch"));
                }
                let mut total = 0;
                for (b, branch) in specs.iter().enumerate() {
                    let mut inner = Vec::new();
                    let (layers, out) =
                        build_layers(branch, s, rng, &format!("{path}.{b}."), &mut inner)?;
                    match out {
                        Shape::Vector { width } => total += width,
                        other => {
                            return Err(NnError::shape(
                                &path,
                                format!("branch {b} must end in a vector, got {other:?}"),
                            ))
                        }
                    }
                    branches.push(layers);
                }
                (Vec::new(), Shape::Vector { width: total })
            }
            (LayerSpec::Conv1d { .. }, _)
            | (LayerSpec::MaxOverTime | LayerSpec::AvgOverTime, _)
            | (LayerSpec::BiLstm { .. }, _)
            | (LayerSpec::BiGru { .. }, _)
            | (LayerSpec::AdditiveAttention { .. }, _) => return Err(mismatch("a sequence")),
            (LayerSpec::Dense { .. }, _) => return Err(mismatch("a vector")),
        };
        shape = out;
        shapes.push(out);
        layers.push(Layer {
            spec: spec.clone(),
            params,
            branches,
            slot: 0,
        });
    }
    Ok((layers, shape))
}

fn assign_slots<F>(layers: &mut [Layer<F>], next: &mut usize) {
    for layer in layers {
        layer.slot = *next;
        *next += layer.params.len();
        for branch in &mut layer.branches {
            assign_slots(branch, next);
        }
    }
}

fn collect_params<'a, F>(layers: &'a [Layer<F>], out: &mut Vec<&'a Parameter<F>>) {
    for layer in layers {
        out.extend(layer.params.iter());
        for branch in &layer.branches {
            collect_params(branch, out);
        }
    }
}

fn collect_params_mut<'a, F>(layers: &'a mut [Layer<F>], out: &mut Vec<&'a mut Parameter<F>>) {
    for layer in layers {
        out.extend(layer.params.iter_mut());
        for branch in &mut layer.branches {
            collect_params_mut(branch, out);
        }
    }
}

/// Inverted-dropout scale factors: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
fn dropout_mask<F: Real>(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<F> {
    let keep = F::lit(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
        .collect()
}

/// Zeroes whole timesteps of a `steps x width` row-major block with
/// probability `rate` and rescales survivors by `1 / (1 - rate)`. Identity in
/// infer mode. Returns the per-timestep scale factors applied.
pub fn word_dropout<F: Real>(
    embedded: &mut [F],
    width: usize,
    rate: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Vec<F> {
    let steps = embedded.len() / width.max(1);
    if mode == Mode::Infer || rate == 0.0 {
        return vec![F::one(); steps];
    }
    let keep = F::lit(1.0 / (1.0 - rate));
    let scales: Vec<F> = (0..steps)
        .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
        .collect();
    for (row, &s) in embedded.chunks_mut(width).zip(&scales) {
        row.iter_mut().for_each(|x| *x *= s);
    }
    scales
}

/// Per-parameter gradient accumulator for one or more examples.
#[derive(Clone, Debug)]
pub(crate) enum GradSlot<F> {
    Dense(Vec<F>),
    Rows { width: usize, rows: BTreeMap<u32, Vec<F>> },
}

#[derive(Clone, Debug)]
pub(crate) struct Gradients<F> {
    slots: Vec<GradSlot<F>>,
}

impl<F: Real> Gradients<F> {
    fn for_params(params: &[&Parameter<F>]) -> Self {
        let slots = params
            .iter()
            .map(|p| {
                if p.row_sparse {
                    GradSlot::Rows {
                        width: p.value.row_width(),
                        rows: BTreeMap::new(),
                    }
                } else {
                    GradSlot::Dense(vec![F::zero(); p.value.len()])
                }
            })
            .collect();
        Self { slots }
    }

    fn take(&mut self, slot: usize) -> Vec<F> {
        match &mut self.slots[slot] {
            GradSlot::Dense(v) => std::mem::take(v),
            GradSlot::Rows { .. } => unreachable!("dense slot expected"),
        }
    }

    fn restore(&mut self, slot: usize, v: Vec<F>) {
        self.slots[slot] = GradSlot::Dense(v);
    }

    fn add_row(&mut self, slot: usize, row: u32, alpha: F, x: &[F]) {
        if let GradSlot::Rows { width, rows } = &mut self.slots[slot] {
            let acc = rows.entry(row).or_insert_with(|| vec![F::zero(); *width]);
            axpy(acc, alpha, x);
        }
    }

    fn merge(&mut self, other: Gradients<F>) {
        for (mine, theirs) in self.slots.iter_mut().zip(other.slots) {
            match (mine, theirs) {
                (GradSlot::Dense(a), GradSlot::Dense(b)) => axpy(a, F::one(), &b),
                (GradSlot::Rows { rows: a, .. }, GradSlot::Rows { rows: b, .. }) => {
                    for (r, v) in b {
                        match a.get_mut(&r) {
                            Some(acc) => axpy(acc, F::one(), &v),
                            None => {
                                a.insert(r, v);
                            }
                        }
                    }
                }
                _ => unreachable!("slot kinds fixed per graph"),
            }
        }
    }

    fn write_into(self, params: Vec<&mut Parameter<F>>) {
        for (p, slot) in params.into_iter().zip(self.slots) {
            match slot {
                GradSlot::Dense(v) => p.grad.values_mut().copy_from_slice(&v),
                GradSlot::Rows { width, rows } => {
                    let g = p.grad.values_mut();
                    g.fill(F::zero());
                    for (r, v) in rows {
                        let r = r as usize;
                        g[r * width..(r + 1) * width].copy_from_slice(&v);
                    }
                }
            }
        }
    }
}

impl<F: Real> ModelGraph<F> {
    /// Validates the layer stack for sequences of `max_len` indices and
    /// initializes parameters from `seed`. The stack must start with an
    /// embedding and end with a one-unit sigmoid dense layer.
    pub fn new(specs: Vec<LayerSpec>, max_len: usize, seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shapes = Vec::new();
        let (mut layers, out) =
            build_layers(&specs, Shape::Indices { len: max_len }, &mut rng, "", &mut shapes)?;
        let last = specs.len().saturating_sub(1).to_string();
        match specs.last() {
            Some(LayerSpec::Dense { units: 1, activation: Activation::Sigmoid }) => {}
            _ => return Err(NnError::shape(&last, "final layer must be dense(1, sigmoid)")),
        }
        debug_assert_eq!(out, Shape::Vector { width: 1 });
        assign_slots(&mut layers, &mut 0);
        Ok(Self {
            layers,
            max_len,
            shapes,
        })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// Output shape of each top-level layer.
    pub fn output_shapes(&self) -> &[Shape] {
        &self.shapes
    }

    /// All parameters in a fixed depth-first order.
    pub fn parameters(&self) -> Vec<&Parameter<F>> {
        let mut out = Vec::new();
        collect_params(&self.layers, &mut out);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out = Vec::new();
        collect_params_mut(&mut self.layers, &mut out);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }

    /// Replaces the embedding table (first parameter).
    pub fn set_embedding(&mut self, matrix: Tensor<F>) -> Result<(), NnError> {
        let p = &mut self.layers[0].params[0];
        if p.value.shape() != matrix.shape() {
            return Err(NnError::shape(
                "0",
                format!("embedding matrix {:?} does not match {:?}", matrix.shape(), p.value.shape()),
            ));
        }
        p.value = matrix;
        Ok(())
    }

    /// Converts every parameter to another precision.
    pub fn cast<G: Real>(&self) -> ModelGraph<G> {
        fn cast_layers<F: Real, G: Real>(layers: &[Layer<F>]) -> Vec<Layer<G>> {
            layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    params: l
                        .params
                        .iter()
                        .map(|p| Parameter {
                            value: p.value.cast(),
                            grad: p.grad.cast(),
                            row_sparse: p.row_sparse,
                        })
                        .collect(),
                    branches: l.branches.iter().map(|b| cast_layers(b)).collect(),
                    slot: l.slot,
                })
                .collect()
        }
        ModelGraph {
            layers: cast_layers(&self.layers),
            max_len: self.max_len,
            shapes: self.shapes.clone(),
        }
    }

    /// Runs the batch. In train mode dropout is active (seeded per example
    /// from `seed`) and activations are cached for [`Self::backward`]. In
    /// infer mode the result is a pure function of parameters and input.
    pub fn forward(
        &self,
        batch: &[EncodedSequence],
        mode: Mode,
        seed: u64,
    ) -> Result<ForwardPass<F>, NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let train = mode == Mode::Train;
        let results: Vec<(F, Option<Vec<Trace<F>>>)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, seq)| {
                let (p, traces) = self.run_example(seq, train, mix_seed(seed, i as u64))?;
                Ok((p, train.then_some(traces)))
            })
            .collect::<Result<_, NnError>>()?;
        let (probabilities, traces): (Vec<F>, Vec<_>) = results.into_iter().unzip();
        Ok(ForwardPass {
            probabilities,
            traces: traces.into_iter().collect(),
        })
    }

    /// Infer-mode probabilities.
    pub fn predict(&self, batch: &[EncodedSequence]) -> Result<Vec<F>, NnError> {
        Ok(self.forward(batch, Mode::Infer, 0)?.probabilities)
    }

    /// Fills every parameter's `grad` with d(loss)/d(param), given
    /// `loss_grad[i]` = d(loss)/d(probability i).
    pub fn backward(&mut self, pass: &ForwardPass<F>, loss_grad: &[F]) -> Result<(), NnError> {
        let traces = pass.traces.as_ref().ok_or(NnError::NoCachedActivations)?;
        if loss_grad.len() != traces.len() {
            return Err(NnError::GradientLength {
                expected: traces.len(),
                found: loss_grad.len(),
            });
        }
        let partials: Vec<Gradients<F>> = {
            let params = self.parameters();
            traces
                .par_chunks(GRAD_CHUNK)
                .zip(loss_grad.par_chunks(GRAD_CHUNK))
                .map(|(tr, lg)| {
                    let mut g = Gradients::for_params(&params);
                    for (t, &d) in tr.iter().zip(lg) {
                        backward_layers(&self.layers, t, Value::Vector(vec![d]), &mut g);
                    }
                    g
                })
                .collect()
        };
        let mut partials = partials.into_iter();
        let mut total = partials.next().expect("non-empty batch");
        for p in partials {
            total.merge(p);
        }
        total.write_into(self.parameters_mut());
        Ok(())
    }

    /// Attention weights over all `max_len` positions for one sequence, if
    /// the graph has an attention layer. Masked positions are exactly zero.
    pub fn attention_weights(&self, seq: &EncodedSequence) -> Result<Option<Vec<F>>, NnError> {
        let (_, traces) = self.run_example(seq, false, 0)?;
        Ok(find_attention(&traces).map(|(w, steps)| {
            let mut full = vec![F::zero(); steps];
            full[..w.len()].copy_from_slice(w);
            full
        }))
    }

    fn run_example(
        &self,
        seq: &EncodedSequence,
        train: bool,
        seed: u64,
    ) -> Result<(F, Vec<Trace<F>>), NnError> {
        if seq.indices.len() != self.max_len {
            return Err(NnError::shape(
                "0",
                format!("sequence length {} != {}", seq.indices.len(), self.max_len),
            ));
        }
        let mut ctx = Ctx {
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut traces = Vec::with_capacity(self.layers.len());
        let (value, trace) = embed(&self.layers[0], seq, &mut ctx)?;
        traces.push(trace);
        let out = forward_layers(&self.layers[1..], value, &mut ctx, &mut traces);
        Ok((out.into_vector()[0], traces))
    }
}

fn find_attention<F>(traces: &[Trace<F>]) -> Option<(&[F], usize)> {
    traces.iter().find_map(|t| match t {
        Trace::Attention { weights, input, .. } => Some((weights.as_slice(), input.steps)),
        Trace::Parallel { branches, .. } => branches.iter().find_map(|b| find_attention(b)),
        _ => None,
    })
}

fn embed<F: Real>(
    layer: &Layer<F>,
    seq: &EncodedSequence,
    ctx: &mut Ctx,
) -> Result<(Value<F>, Trace<F>), NnError> {
    let LayerSpec::Embedding { word_dropout: rate, .. } = layer.spec else {
        unreachable!("first layer is an embedding")
    };
    let table = &layer.params[0].value;
    let (vocab, width) = (table.shape()[0], table.shape()[1]);
    let steps = seq.indices.len();
    // a fully padded input still exposes position 0
    let valid = seq.true_length.clamp(1, steps);
    let indices = seq.indices[..valid].to_vec();
    let mut data = vec![F::zero(); valid * width];
    for (t, &idx) in indices.iter().enumerate() {
        if idx as usize >= vocab {
            return Err(NnError::shape("0", format!("index {idx} >= vocabulary size {vocab}")));
        }
        if idx != PAD_INDEX {
            data[t * width..(t + 1) * width].copy_from_slice(table.row(idx as usize));
        }
    }
    let mode = if ctx.train { Mode::Train } else { Mode::Infer };
    let scales = word_dropout(&mut data, width, rate, mode, &mut ctx.rng);
    Ok((
        Value::Seq(Seq { data, steps, width, valid }),
        Trace::Embedding { indices, scales },
    ))
}

fn forward_layers<F: Real>(
    layers: &[Layer<F>],
    mut value: Value<F>,
    ctx: &mut Ctx,
    traces: &mut Vec<Trace<F>>,
) -> Value<F> {
    for layer in layers {
        let (out, trace) = forward_layer(layer, value, ctx);
        traces.push(trace);
        value = out;
    }
    value
}

fn forward_layer<F: Real>(layer: &Layer<F>, input: Value<F>, ctx: &mut Ctx) -> (Value<F>, Trace<F>) {
    let p = &layer.params;
    match &layer.spec {
        LayerSpec::Embedding { .. } => unreachable!("embedding is only the first layer"),
        LayerSpec::Conv1d { width: w, filters } => {
            let input = input.into_seq();
            let (kernel, bias) = (p[0].value.values(), p[1].value.values());
            let d = input.width;
            let steps = input.steps - w + 1;
            let valid = input.valid.saturating_sub(w - 1).clamp(1, steps);
            let mut data = vec![F::zero(); valid * filters];
            let mut window = vec![F::zero(); w * d];
            for t in 0..valid {
                let x = conv_window(&input, t, *w, &mut window);
                for f in 0..*filters {
                    let z = bias[f] + dot(&kernel[f * w * d..(f + 1) * w * d], x);
                    data[t * filters + f] = z.max(F::zero());
                }
            }
            let output = Seq { data, steps, width: *filters, valid };
            (Value::Seq(output.clone()), Trace::Conv { input, output })
        }
        LayerSpec::MaxOverTime => {
            let input = input.into_seq();
            let mut out = input.row(0).to_vec();
            let mut argmax = vec![0; input.width];
            for t in 1..input.valid {
                for (j, &x) in input.row(t).iter().enumerate() {
                    if x > out[j] {
                        out[j] = x;
                        argmax[j] = t;
                    }
                }
            }
            (Value::Vector(out), Trace::Max { argmax, like: shape_only(&input) })
        }
        LayerSpec::AvgOverTime => {
            let input = input.into_seq();
            let mut out = vec![F::zero(); input.width];
            for t in 0..input.valid {
                axpy(&mut out, F::one(), input.row(t));
            }
            let n = F::lit(input.valid as f64);
            out.iter_mut().for_each(|x| *x /= n);
            (Value::Vector(out), Trace::Avg { like: shape_only(&input) })
        }
        LayerSpec::BiLstm { units, dropout, output } => {
            let input = input.into_seq();
            let masks = direction_masks(&input, *dropout, ctx);
            let dirs = [0, 1].map(|d| {
                let weights = cell_weights(p, d, *units);
                lstm_forward(&weights, direction_inputs(&input, d, masks[d].as_deref()))
            });
            let out = bidirectional_output(&input, *units, *output, |d, k| dirs[d][k].h.as_slice());
            (out, Trace::BiLstm { like: shape_only(&input), masks, dirs })
        }
        LayerSpec::BiGru { units, dropout } => {
            let input = input.into_seq();
            let masks = direction_masks(&input, *dropout, ctx);
            let dirs = [0, 1].map(|d| {
                let weights = cell_weights(p, d, *units);
                gru_forward(&weights, direction_inputs(&input, d, masks[d].as_deref()))
            });
            let out = bidirectional_output(&input, *units, RecurrentOutput::Sequence, |d, k| {
                dirs[d][k].h.as_slice()
            });
            (out, Trace::BiGru { like: shape_only(&input), masks, dirs })
        }
        LayerSpec::AdditiveAttention { units } => {
            let input = input.into_seq();
            let (w, b, v) = (p[0].value.values(), p[1].value.values(), p[2].value.values());
            let n = input.valid;
            let mut projected = vec![F::zero(); n * units];
            let mut scores = vec![F::zero(); n];
            for t in 0..n {
                let u = &mut projected[t * units..(t + 1) * units];
                affine(w, b, input.row(t), u);
                u.iter_mut().for_each(|x| *x = x.tanh());
                scores[t] = dot(v, u);
            }
            let max = scores.iter().copied().fold(F::neg_infinity(), F::max);
            let mut weights: Vec<F> = scores.iter().map(|&s| (s - max).exp()).collect();
            let z: F = weights.iter().copied().sum();
            weights.iter_mut().for_each(|a| *a /= z);
            let mut context = vec![F::zero(); input.width];
            for (t, &a) in weights.iter().enumerate() {
                axpy(&mut context, a, input.row(t));
            }
            (Value::Vector(context), Trace::Attention { input, projected, weights })
        }
        LayerSpec::Dense { activation, .. } => {
            let input = input.into_vector();
            let (w, b) = (p[0].value.values(), p[1].value.values());
            let mut out = vec![F::zero(); b.len()];
            affine(w, b, &input, &mut out);
            let eps = F::lit(OUTPUT_EPSILON);
            for x in &mut out {
                *x = match activation {
                    Activation::Rectifier => x.max(F::zero()),
                    Activation::Sigmoid => sigmoid(*x).max(eps).min(F::one() - eps),
                    Activation::Identity => *x,
                };
            }
            (Value::Vector(out.clone()), Trace::Dense { input, output: out })
        }
        LayerSpec::Dropout { rate } => {
            let mut value = input;
            let mask = (ctx.train && *rate > 0.0).then(|| {
                let mask = dropout_mask(value.data().len(), *rate, &mut ctx.rng);
                value.data_mut().iter_mut().zip(&mask).for_each(|(x, &m)| *x *= m);
                mask
            });
            (value, Trace::Dropout { mask })
        }
        LayerSpec::Parallel { .. } => {
            let mut out = Vec::new();
            let mut branch_traces = Vec::with_capacity(layer.branches.len());
            let mut widths = Vec::with_capacity(layer.branches.len());
            for branch in &layer.branches {
                let mut traces = Vec::with_capacity(branch.len());
                let v = forward_layers(branch, input.clone(), ctx, &mut traces).into_vector();
                widths.push(v.len());
                out.extend(v);
                branch_traces.push(traces);
            }
            (Value::Vector(out), Trace::Parallel { branches: branch_traces, widths })
        }
    }
}

/// Rows `t..t+w` of the input, zero-filled past the stored rows.
fn conv_window<'a, F: Real>(input: &'a Seq<F>, t: usize, w: usize, buf: &'a mut [F]) -> &'a [F] {
    let d = input.width;
    if t + w <= input.valid {
        &input.data[t * d..(t + w) * d]
    } else {
        let avail = (input.valid - t) * d;
        buf[..avail].copy_from_slice(&input.data[t * d..input.valid * d]);
        buf[avail..].fill(F::zero());
        buf
    }
}

fn shape_only<F: Real>(s: &Seq<F>) -> Seq<F> {
    Seq {
        data: Vec::new(),
        ..*s
    }
}

fn cell_weights<F: Real>(p: &[Parameter<F>], dir: usize, units: usize) -> CellWeights<'_, F> {
    CellWeights {
        w: p[3 * dir].value.values(),
        u: p[3 * dir + 1].value.values(),
        b: p[3 * dir + 2].value.values(),
        units,
    }
}

/// Input-connection dropout masks, one per direction, constant over time.
fn direction_masks<F: Real>(input: &Seq<F>, rate: f64, ctx: &mut Ctx) -> [Option<Vec<F>>; 2] {
    if !ctx.train || rate == 0.0 {
        return [None, None];
    }
    let rng = &mut ctx.rng;
    [
        Some(dropout_mask(input.width, rate, rng)),
        Some(dropout_mask(input.width, rate, rng)),
    ]
}

/// Masked input rows in processing order: forward direction reads
/// `0..valid`, backward reads `valid-1..=0`.
fn direction_inputs<F: Real>(input: &Seq<F>, dir: usize, mask: Option<&[F]>) -> Vec<Vec<F>> {
    let n = input.valid;
    (0..n)
        .map(|k| {
            let t = if dir == 0 { k } else { n - 1 - k };
            let row = input.row(t);
            match mask {
                Some(m) => row.iter().zip(m).map(|(&x, &s)| x * s).collect(),
                None => row.to_vec(),
            }
        })
        .collect()
}

fn bidirectional_output<'a, F: Real>(
    input: &Seq<F>,
    units: usize,
    output: RecurrentOutput,
    h: impl Fn(usize, usize) -> &'a [F],
) -> Value<F> {
    let n = input.valid;
    match output {
        RecurrentOutput::Sequence => {
            let mut data = Vec::with_capacity(n * 2 * units);
            for t in 0..n {
                data.extend_from_slice(h(0, t));
                data.extend_from_slice(h(1, n - 1 - t));
            }
            Value::Seq(Seq { data, steps: input.steps, width: 2 * units, valid: n })
        }
        RecurrentOutput::Final => {
            let mut v = h(0, n - 1).to_vec();
            v.extend_from_slice(h(1, n - 1));
            Value::Vector(v)
        }
    }
}

/// Per-direction output gradients indexed by processing step.
fn direction_output_grads<F: Real>(
    grad: &Value<F>,
    n: usize,
    units: usize,
    dir: usize,
) -> Vec<Option<&[F]>> {
    let mut out = vec![None; n];
    match grad {
        Value::Seq(g) => {
            for (k, slot) in out.iter_mut().enumerate() {
                let t = if dir == 0 { k } else { n - 1 - k };
                let row = g.row(t);
                *slot = Some(&row[dir * units..(dir + 1) * units]);
            }
        }
        Value::Vector(g) => out[n - 1] = Some(&g[dir * units..(dir + 1) * units]),
    }
    out
}

fn scatter_direction_grads<F: Real>(
    dx: &mut Seq<F>,
    step_grads: Vec<Vec<F>>,
    dir: usize,
    mask: Option<&[F]>,
) {
    let n = dx.valid;
    for (k, g) in step_grads.into_iter().enumerate() {
        let t = if dir == 0 { k } else { n - 1 - k };
        let row = dx.row_mut(t);
        match mask {
            Some(m) => row
                .iter_mut()
                .zip(g.iter().zip(m))
                .for_each(|(r, (&gi, &mi))| *r += gi * mi),
            None => axpy(row, F::one(), &g),
        }
    }
}

fn backward_layers<F: Real>(
    layers: &[Layer<F>],
    traces: &[Trace<F>],
    mut grad: Value<F>,
    grads: &mut Gradients<F>,
) -> Value<F> {
    for (layer, trace) in layers.iter().zip(traces).rev() {
        grad = backward_layer(layer, trace, grad, grads);
    }
    grad
}

fn backward_layer<F: Real>(
    layer: &Layer<F>,
    trace: &Trace<F>,
    grad: Value<F>,
    grads: &mut Gradients<F>,
) -> Value<F> {
    let p = &layer.params;
    let slot = layer.slot;
    match (&layer.spec, trace) {
        (LayerSpec::Embedding { .. }, Trace::Embedding { indices, scales }) => {
            let g = grad.into_seq();
            for (t, (&idx, &s)) in indices.iter().zip(scales).enumerate() {
                if idx != PAD_INDEX && s != F::zero() {
                    grads.add_row(slot, idx, s, g.row(t));
                }
            }
            Value::Vector(Vec::new())
        }
        (LayerSpec::Conv1d { width: w, filters }, Trace::Conv { input, output }) => {
            let g = grad.into_seq();
            let kernel = p[0].value.values();
            let d = input.width;
            let mut dk = grads.take(slot);
            let mut db = grads.take(slot + 1);
            let mut dx = input.zeros_like();
            let mut window = vec![F::zero(); w * d];
            let mut dwin = vec![F::zero(); w * d];
            for t in 0..output.valid {
                let x = conv_window(input, t, *w, &mut window);
                dwin.fill(F::zero());
                let mut any = false;
                for f in 0..*filters {
                    let gf = g.data[t * filters + f];
                    if output.data[t * filters + f] <= F::zero() || gf == F::zero() {
                        continue;
                    }
                    any = true;
                    db[f] += gf;
                    axpy(&mut dk[f * w * d..(f + 1) * w * d], gf, x);
                    axpy(&mut dwin, gf, &kernel[f * w * d..(f + 1) * w * d]);
                }
                if any {
                    let end = (t + w).min(input.valid);
                    axpy(&mut dx.data[t * d..end * d], F::one(), &dwin[..(end - t) * d]);
                }
            }
            grads.restore(slot, dk);
            grads.restore(slot + 1, db);
            Value::Seq(dx)
        }
        (LayerSpec::MaxOverTime, Trace::Max { argmax, like }) => {
            let g = grad.into_vector();
            let mut dx = Seq { data: vec![F::zero(); like.valid * like.width], ..*like };
            for (j, (&t, &gj)) in argmax.iter().zip(&g).enumerate() {
                dx.data[t * like.width + j] += gj;
            }
            Value::Seq(dx)
        }
        (LayerSpec::AvgOverTime, Trace::Avg { like }) => {
            let g = grad.into_vector();
            let n = F::lit(like.valid as f64);
            let row: Vec<F> = g.iter().map(|&x| x / n).collect();
            let data = (0..like.valid).flat_map(|_| row.iter().copied()).collect();
            Value::Seq(Seq { data, ..*like })
        }
        (LayerSpec::BiLstm { units, .. }, Trace::BiLstm { like, masks, dirs }) => {
            let mut dx = Seq { data: vec![F::zero(); like.valid * like.width], ..*like };
            for d in 0..2 {
                let weights = cell_weights(p, d, *units);
                let base = slot + 3 * d;
                let (mut dw, mut du, mut db) = (grads.take(base), grads.take(base + 1), grads.take(base + 2));
                let dh = direction_output_grads(&grad, like.valid, *units, d);
                let step_grads = lstm_backward(
                    &weights,
                    &dirs[d],
                    &dh,
                    CellGrads { w: &mut dw, u: &mut du, b: &mut db },
                );
                grads.restore(base, dw);
                grads.restore(base + 1, du);
                grads.restore(base + 2, db);
                scatter_direction_grads(&mut dx, step_grads, d, masks[d].as_deref());
            }
            Value::Seq(dx)
        }
        (LayerSpec::BiGru { units, .. }, Trace::BiGru { like, masks, dirs }) => {
            let mut dx = Seq { data: vec![F::zero(); like.valid * like.width], ..*like };
            for d in 0..2 {
                let weights = cell_weights(p, d, *units);
                let base = slot + 3 * d;
                let (mut dw, mut du, mut db) = (grads.take(base), grads.take(base + 1), grads.take(base + 2));
                let dh = direction_output_grads(&grad, like.valid, *units, d);
                let step_grads = gru_backward(
                    &weights,
                    &dirs[d],
                    &dh,
                    CellGrads { w: &mut dw, u: &mut du, b: &mut db },
                );
                grads.restore(base, dw);
                grads.restore(base + 1, du);
                grads.restore(base + 2, db);
                scatter_direction_grads(&mut dx, step_grads, d, masks[d].as_deref());
            }
            Value::Seq(dx)
        }
        (LayerSpec::AdditiveAttention { units }, Trace::Attention { input, projected, weights }) => {
            let dc = grad.into_vector();
            let (w, v) = (p[0].value.values(), p[2].value.values());
            let n = input.valid;
            let mut dw = grads.take(slot);
            let mut db = grads.take(slot + 1);
            let mut dv = grads.take(slot + 2);
            let mut dx = input.zeros_like();
            let dalpha: Vec<F> = (0..n).map(|t| dot(&dc, input.row(t))).collect();
            let expected: F = weights.iter().zip(&dalpha).map(|(&a, &da)| a * da).sum();
            let mut da = vec![F::zero(); *units];
            for t in 0..n {
                axpy(dx.row_mut(t), weights[t], &dc);
                let ds = weights[t] * (dalpha[t] - expected);
                let u = &projected[t * units..(t + 1) * units];
                axpy(&mut dv, ds, u);
                for j in 0..*units {
                    da[j] = ds * v[j] * (F::one() - u[j] * u[j]);
                }
                axpy(&mut db, F::one(), &da);
                matvec_backward(w, input.row(t), &da, &mut dw, Some(dx.row_mut(t)));
            }
            grads.restore(slot, dw);
            grads.restore(slot + 1, db);
            grads.restore(slot + 2, dv);
            Value::Seq(dx)
        }
        (LayerSpec::Dense { activation, .. }, Trace::Dense { input, output }) => {
            let g = grad.into_vector();
            let w = p[0].value.values();
            let dz: Vec<F> = g
                .iter()
                .zip(output)
                .map(|(&gi, &o)| match activation {
                    Activation::Rectifier if o > F::zero() => gi,
                    Activation::Rectifier => F::zero(),
                    Activation::Sigmoid => gi * o * (F::one() - o),
                    Activation::Identity => gi,
                })
                .collect();
            let mut dw = grads.take(slot);
            let mut db = grads.take(slot + 1);
            let mut dx = vec![F::zero(); input.len()];
            axpy(&mut db, F::one(), &dz);
            matvec_backward(w, input, &dz, &mut dw, Some(&mut dx));
            grads.restore(slot, dw);
            grads.restore(slot + 1, db);
            Value::Vector(dx)
        }
        (LayerSpec::Dropout { .. }, Trace::Dropout { mask }) => {
            let mut g = grad;
            if let Some(m) = mask {
                g.data_mut().iter_mut().zip(m).for_each(|(x, &s)| *x *= s);
            }
            g
        }
        (LayerSpec::Parallel { .. }, Trace::Parallel { branches, widths }) => {
            let g = grad.into_vector();
            let mut offset = 0;
            let mut total: Option<Value<F>> = None;
            for ((branch, traces), &w) in layer.branches.iter().zip(branches).zip(widths) {
                let part = Value::Vector(g[offset..offset + w].to_vec());
                offset += w;
                let dx = backward_layers(branch, traces, part, grads);
                total = Some(match total {
                    None => dx,
                    Some(mut acc) => {
                        axpy(acc.data_mut(), F::one(), dx.data());
                        acc
                    }
                });
            }
            total.expect("at least one branch")
        }
        (spec, _) => unreachable!("trace does not match layer {}", spec.name()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::spec::RecurrentOutput;

    fn seq(indices: &[u32], len: usize) -> EncodedSequence {
        let mut v = indices.to_vec();
        v.resize(len, 0);
        EncodedSequence::new(v, indices.len())
    }

    fn attention_graph(len: usize) -> ModelGraph<f64> {
        ModelGraph::new(
            vec![
                LayerSpec::Embedding { vocab_size: 6, dim: 3, word_dropout: 0.0 },
                LayerSpec::BiLstm { units: 2, dropout: 0.0, output: RecurrentOutput::Sequence },
                LayerSpec::AdditiveAttention { units: 3 },
                LayerSpec::Dense { units: 1, activation: Activation::Sigmoid },
            ],
            len,
            5,
        )
        .unwrap()
    }

    #[test]
    fn conv_output_length() {
        let g = ModelGraph::<f32>::new(
            vec![
                LayerSpec::Embedding { vocab_size: 4, dim: 2, word_dropout: 0.0 },
                LayerSpec::Conv1d { width: 3, filters: 2 },
                LayerSpec::MaxOverTime,
                LayerSpec::Dense { units: 1, activation: Activation::Sigmoid },
            ],
            200,
            0,
        )
        .unwrap();
        assert_eq!(g.output_shapes()[1], Shape::Sequence { steps: 198, width: 2 });
    }

    #[test]
    fn fully_padded_attention_uses_first_position() {
        let g = attention_graph(6);
        let empty = seq(&[], 6);
        let w = g.attention_weights(&empty).unwrap().unwrap();
        assert_eq!(w, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let p = g.predict(&[empty]).unwrap()[0];
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn attention_masks_padding() {
        let g = attention_graph(8);
        let w = g.attention_weights(&seq(&[2, 3, 4], 8)).unwrap().unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[..3].iter().all(|&a| a > 0.0));
        assert!(w[3..].iter().all(|&a| a == 0.0));
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let err = ModelGraph::<f32>::new(
            vec![
                LayerSpec::Embedding { vocab_size: 4, dim: 2, word_dropout: 0.0 },
                LayerSpec::Dense { units: 1, activation: Activation::Sigmoid },
            ],
            5,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, NnError::Shape { ref layer, .. } if layer == "1"), "{err}");
        let err = ModelGraph::<f32>::new(
            vec![
                LayerSpec::Embedding { vocab_size: 4, dim: 2, word_dropout: 0.0 },
                LayerSpec::MaxOverTime,
                LayerSpec::Dense { units: 2, activation: Activation::Sigmoid },
            ],
            5,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, NnError::Shape { .. }));
    }

    #[test]
    fn wrong_sequence_length_is_rejected() {
        let g = attention_graph(6);
        assert!(matches!(g.predict(&[seq(&[2], 5)]), Err(NnError::Shape { .. })));
        assert!(matches!(g.predict(&[seq(&[9], 6)]), Err(NnError::Shape { .. })));
        assert!(matches!(g.predict(&[]), Err(NnError::EmptyBatch)));
    }

    #[test]
    fn backward_needs_train_pass() {
        let mut g = attention_graph(6);
        let pass = g.forward(&[seq(&[2], 6)], Mode::Infer, 0).unwrap();
        assert!(matches!(g.backward(&pass, &[1.0]), Err(NnError::NoCachedActivations)));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let mut g = attention_graph(6);
        let pass = g.forward(&[seq(&[2, 3], 6), seq(&[4], 6)], Mode::Train, 1).unwrap();
        g.backward(&pass, &[0.0, 0.0]).unwrap();
        assert!(g.parameters().iter().all(|p| p.grad.values().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn word_dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let orig = vec![1.0f64, 2.0, 3.0, 4.0];
        let mut x = orig.clone();
        word_dropout(&mut x, 2, 0.0, Mode::Train, &mut rng);
        assert_eq!(x, orig);
        word_dropout(&mut x, 2, 0.5, Mode::Infer, &mut rng);
        assert_eq!(x, orig);
    }

    #[test]
    fn word_dropout_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = vec![1.0f64; 100_000];
        word_dropout(&mut x, 1, 0.3, Mode::Train, &mut rng);
        let zeroed = x.iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeroed - 0.3).abs() < 0.01, "{zeroed}");
        let kept = x.iter().find(|&&v| v != 0.0).unwrap();
        assert!((kept - 1.0 / 0.7).abs() < 1e-12);
    }

    #[test]
    fn word_dropout_zeroes_whole_timesteps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = vec![1.0f64; 3 * 1000];
        word_dropout(&mut x, 3, 0.5, Mode::Train, &mut rng);
        for row in x.chunks(3) {
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }
}
