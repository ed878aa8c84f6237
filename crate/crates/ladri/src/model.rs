//! From-scratch feedforward risk classifier: dense ReLU layers with a
//! softmax head, categorical cross-entropy, backpropagation, and Adam.
//!
//! The multinomial logistic baseline is the same machinery with zero hidden
//! layers. Persisted models are a versioned JSON document carrying the
//! network spec, normalization statistics, the feature-name contract, and
//! all parameters as decimal text with 17 significant digits so that a
//! load/save round trip is value-exact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LadriError, Result};
use crate::features::{
    apply_normalizer_into, fit_normalizer, FeatureVector, NormStats, FEATURE_COUNT, FEATURE_NAMES,
};
use crate::hara::{Stage, STAGE_COUNT};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Layer widths of the classifier. Hidden layers use ReLU; the output layer
/// feeds a softmax over the risk stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            input_dim: FEATURE_COUNT,
            hidden: vec![16, 16],
            output_dim: STAGE_COUNT,
        }
    }
}

impl NetworkSpec {
    /// Zero hidden layers: multinomial logistic regression.
    pub fn baseline() -> Self {
        Self {
            hidden: Vec::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(LadriError::Model("all layer widths must be >= 1".into()));
        }
        Ok(())
    }

    /// (rows, cols) of each weight matrix, input to output.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden {
            dims.push((w, prev));
            prev = w;
        }
        dims.push((self.output_dim, prev));
        dims
    }
}

/// One dense layer, weights row-major with shape (rows = out, cols = in).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// out = W x + b
    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out[r] = acc;
        }
    }
}

/// Trained parameters plus everything inference needs to be self-contained.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub spec: NetworkSpec,
    pub layers: Vec<DenseLayer>,
    pub norm: NormStats,
    pub format_version: u32,
}

impl ModelWeights {
    /// Zero-initialized parameters (uniform output regardless of input).
    pub fn zeros(spec: NetworkSpec, norm: NormStats) -> Result<ModelWeights> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(r, c)| DenseLayer::zeros(r, c))
            .collect();
        let model = ModelWeights {
            spec,
            layers,
            norm,
            format_version: MODEL_FORMAT_VERSION,
        };
        model.validate()?;
        Ok(model)
    }

    /// He-normal initialization, deterministic per seed.
    pub fn init(spec: NetworkSpec, norm: NormStats, seed: u64) -> Result<ModelWeights> {
        let mut model = ModelWeights::zeros(spec, norm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let std = (2.0 / layer.cols as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("positive std");
            for w in &mut layer.weights {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let dims = self.spec.layer_dims();
        if dims.len() != self.layers.len() {
            return Err(LadriError::Model(format!(
                "expected {} layers, got {}",
                dims.len(),
                self.layers.len()
            )));
        }
        for (i, (layer, (rows, cols))) in self.layers.iter().zip(dims).enumerate() {
            if layer.rows != rows || layer.cols != cols {
                return Err(LadriError::Model(format!(
                    "layer {i} shape ({}, {}) does not chain with spec ({rows}, {cols})",
                    layer.rows, layer.cols
                )));
            }
            if layer.weights.len() != rows * cols || layer.bias.len() != rows {
                return Err(LadriError::Model(format!("layer {i} buffer sizes inconsistent")));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(LadriError::Model(format!("layer {i} contains non-finite entries")));
            }
        }
        if self.norm.mean.len() != self.spec.input_dim || self.norm.std.len() != self.spec.input_dim {
            return Err(LadriError::Model("normalization stats do not match input_dim".into()));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(LadriError::Model(format!(
                "input length {} does not match input_dim {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    /// Probabilities over the output classes for a normalized input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut scratch = Scratch::new(&self.spec);
        forward_logits(self, x, &mut scratch);
        let mut probs = scratch.layer_out(self.layers.len() - 1).to_vec();
        softmax_in_place(&mut probs);
        Ok(probs)
    }
}

/// Per-layer output buffers reused across forward passes.
struct Scratch {
    outs: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(spec: &NetworkSpec) -> Self {
        Self {
            outs: spec.layer_dims().iter().map(|&(r, _)| vec![0.0; r]).collect(),
        }
    }

    fn layer_out(&self, i: usize) -> &[f64] {
        &self.outs[i]
    }
}

/// Runs affine + ReLU chains, leaving raw logits in the last buffer and
/// post-ReLU activations in the hidden buffers.
fn forward_logits(model: &ModelWeights, x: &[f64], scratch: &mut Scratch) {
    let last = model.layers.len() - 1;
    for (i, layer) in model.layers.iter().enumerate() {
        // Split borrow: input is either x or the previous buffer.
        let (before, rest) = scratch.outs.split_at_mut(i);
        let out = &mut rest[0];
        let input: &[f64] = if i == 0 { x } else { &before[i - 1] };
        layer.affine(input, out);
        if i != last {
            for v in out.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Numerically stable softmax (subtracts the max logit).
fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

/// log(sum(exp(logits))) with the max subtracted.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Argmax with ties broken toward the higher (more severe) class index.
pub fn argmax_severe(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p >= probs[best] {
            best = i;
        }
    }
    best
}

/// Gradients congruent to a model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    fn zeros_like(model: &ModelWeights) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }
}

fn resolve_weight(class_weights: Option<&[f64]>, y: usize) -> f64 {
    class_weights.map_or(1.0, |w| w[y])
}

fn check_batch(model: &ModelWeights, batch_x: &[&[f64]], batch_y: &[usize], class_weights: Option<&[f64]>) -> Result<()> {
    if batch_x.is_empty() {
        return Err(LadriError::Data("empty batch".into()));
    }
    if batch_x.len() != batch_y.len() {
        return Err(LadriError::Data(format!(
            "batch size mismatch: {} features vs {} labels",
            batch_x.len(),
            batch_y.len()
        )));
    }
    if let Some(w) = class_weights {
        if w.len() != model.spec.output_dim {
            return Err(LadriError::Data("class weight length mismatch".into()));
        }
    }
    for (x, &y) in batch_x.iter().zip(batch_y) {
        model.check_input(x)?;
        if y >= model.spec.output_dim {
            return Err(LadriError::Data(format!(
                "label {y} out of range for {} classes",
                model.spec.output_dim
            )));
        }
    }
    Ok(())
}

/// Weighted mean categorical cross-entropy of a batch, plus the L2 penalty.
/// Forward-only; used by training diagnostics and as the scalar function the
/// finite-difference check differentiates.
pub fn batch_loss(
    model: &ModelWeights,
    batch_x: &[&[f64]],
    batch_y: &[usize],
    class_weights: Option<&[f64]>,
    l2: f64,
) -> Result<f64> {
    check_batch(model, batch_x, batch_y, class_weights)?;
    let mut scratch = Scratch::new(&model.spec);
    let last = model.layers.len() - 1;
    let mut loss = 0.0;
    let mut weight_sum = 0.0;
    for (x, &y) in batch_x.iter().zip(batch_y) {
        forward_logits(model, x, &mut scratch);
        let logits = scratch.layer_out(last);
        let w = resolve_weight(class_weights, y);
        loss += w * (log_sum_exp(logits) - logits[y]);
        weight_sum += w;
    }
    if weight_sum <= 0.0 {
        return Err(LadriError::Data("class weights sum to zero over the batch".into()));
    }
    Ok(loss / weight_sum + l2_penalty(model, l2))
}

fn l2_penalty(model: &ModelWeights, l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    0.5 * l2
        * model
            .layers
            .iter()
            .flat_map(|l| &l.weights)
            .map(|w| w * w)
            .sum::<f64>()
}

/// Backpropagation: weighted mean cross-entropy loss and its gradient with
/// respect to every weight and bias. The output-layer bias gradient is the
/// weighted mean of (p - one_hot(y)).
pub fn loss_and_grad(
    model: &ModelWeights,
    batch_x: &[&[f64]],
    batch_y: &[usize],
    class_weights: Option<&[f64]>,
    l2: f64,
) -> Result<(f64, Gradients)> {
    check_batch(model, batch_x, batch_y, class_weights)?;
    let n_layers = model.layers.len();
    let last = n_layers - 1;
    let mut grads = Gradients::zeros_like(model);
    let mut scratch = Scratch::new(&model.spec);
    let mut deltas: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.rows]).collect();

    let mut loss = 0.0;
    let mut weight_sum = 0.0;
    for (x, &y) in batch_x.iter().zip(batch_y) {
        forward_logits(model, x, &mut scratch);
        let logits = scratch.layer_out(last);
        let w = resolve_weight(class_weights, y);
        let lse = log_sum_exp(logits);
        loss += w * (lse - logits[y]);
        weight_sum += w;

        // Output delta: w * (softmax(z) - one_hot(y)).
        for (d, &z) in deltas[last].iter_mut().zip(logits) {
            *d = w * (z - lse).exp();
        }
        deltas[last][y] -= w;

        for l in (0..n_layers).rev() {
            // Accumulate this layer's gradient from delta and its input.
            // Borrow the input activation before mutably touching grads.
            let (grad, input): (&mut LayerGrad, &[f64]) = if l == 0 {
                (&mut grads.layers[0], x)
            } else {
                (&mut grads.layers[l], scratch.layer_out(l - 1))
            };
            let layer = &model.layers[l];
            for r in 0..layer.rows {
                let d = deltas[l][r];
                if d != 0.0 {
                    let grow = &mut grad.weights[r * layer.cols..(r + 1) * layer.cols];
                    for (g, &a) in grow.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                grad.bias[r] += d;
            }
            // Propagate delta to the previous hidden layer through W^T and
            // the ReLU mask.
            if l > 0 {
                let activation = scratch.layer_out(l - 1);
                let (below, above) = deltas.split_at_mut(l);
                let delta_here = &above[0];
                let delta_prev = &mut below[l - 1];
                for (j, dp) in delta_prev.iter_mut().enumerate() {
                    if activation[j] > 0.0 {
                        let mut acc = 0.0;
                        for r in 0..layer.rows {
                            acc += delta_here[r] * layer.weights[r * layer.cols + j];
                        }
                        *dp = acc;
                    } else {
                        *dp = 0.0;
                    }
                }
            }
        }
    }

    if weight_sum <= 0.0 {
        return Err(LadriError::Data("class weights sum to zero over the batch".into()));
    }
    for (grad, layer) in grads.layers.iter_mut().zip(&model.layers) {
        for g in grad.weights.iter_mut().chain(grad.bias.iter_mut()) {
            *g /= weight_sum;
        }
        if l2 != 0.0 {
            for (g, w) in grad.weights.iter_mut().zip(&layer.weights) {
                *g += l2 * w;
            }
        }
    }
    Ok((loss / weight_sum + l2_penalty(model, l2), grads))
}

/// Central finite differences of [`batch_loss`] over every parameter.
/// The independent oracle the analytic gradients are verified against.
pub fn finite_difference_gradients(
    model: &ModelWeights,
    batch_x: &[&[f64]],
    batch_y: &[usize],
    class_weights: Option<&[f64]>,
    l2: f64,
    h: f64,
) -> Result<Gradients> {
    let mut probe = model.clone();
    let mut grads = Gradients::zeros_like(model);
    for l in 0..model.layers.len() {
        for i in 0..model.layers[l].weights.len() {
            let orig = probe.layers[l].weights[i];
            probe.layers[l].weights[i] = orig + h;
            let plus = batch_loss(&probe, batch_x, batch_y, class_weights, l2)?;
            probe.layers[l].weights[i] = orig - h;
            let minus = batch_loss(&probe, batch_x, batch_y, class_weights, l2)?;
            probe.layers[l].weights[i] = orig;
            grads.layers[l].weights[i] = (plus - minus) / (2.0 * h);
        }
        for i in 0..model.layers[l].bias.len() {
            let orig = probe.layers[l].bias[i];
            probe.layers[l].bias[i] = orig + h;
            let plus = batch_loss(&probe, batch_x, batch_y, class_weights, l2)?;
            probe.layers[l].bias[i] = orig - h;
            let minus = batch_loss(&probe, batch_x, batch_y, class_weights, l2)?;
            probe.layers[l].bias[i] = orig;
            grads.layers[l].bias[i] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// Largest relative error between analytic and finite-difference gradients.
/// The denominator is floored so that finite-difference truncation noise on
/// near-zero gradients does not register as disagreement.
pub fn max_gradient_relative_error(analytic: &Gradients, numeric: &Gradients) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.layers.iter().zip(&numeric.layers) {
        for (&ga, &gn) in a
            .weights
            .iter()
            .chain(&a.bias)
            .zip(n.weights.iter().chain(&n.bias))
        {
            let rel = (ga - gn).abs() / (ga.abs() + gn.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

/// One labeled training example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub stage: Stage,
}

/// Optimizer and schedule settings. Adam with the usual moment defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// L2 weight decay on weights (not biases).
    pub l2: f64,
    /// Inverse-frequency class weighting of the loss.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 42,
            l2: 0.0,
            class_weighting: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs < 1 || self.batch_size < 1 {
            return Err(LadriError::config(
                "train",
                "learning_rate > 0, epochs >= 1, batch_size >= 1 required",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.l2 < 0.0 {
            return Err(LadriError::config("train", "betas in [0,1) and l2 >= 0 required"));
        }
        Ok(())
    }
}

/// Loss and accuracy per epoch on the training and validation sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Inverse-frequency class weights: n / (classes * count). Absent classes
/// get weight zero.
pub fn inverse_frequency_weights(rows: &[Sample], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for row in rows {
        counts[row.stage.index()] += 1;
    }
    let n = rows.len() as f64;
    counts
        .iter()
        .map(|&c| if c > 0 { n / (classes as f64 * c as f64) } else { 0.0 })
        .collect()
}

struct AdamState {
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl AdamState {
    fn new(model: &ModelWeights) -> Self {
        Self {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
        }
    }

    fn update(&mut self, model: &mut ModelWeights, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for ((layer, grad), (m, v)) in model
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.layers.iter_mut().zip(&mut self.v.layers))
        {
            adam_tensor(&mut layer.weights, &grad.weights, &mut m.weights, &mut v.weights, cfg, bc1, bc2);
            adam_tensor(&mut layer.bias, &grad.bias, &mut m.bias, &mut v.bias, cfg, bc1, bc2);
        }
    }
}

fn adam_tensor(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &TrainConfig,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

fn normalize_rows(norm: &NormStats, rows: &[Sample]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut xs = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    for row in rows {
        let mut x = vec![0.0; FEATURE_COUNT];
        apply_normalizer_into(norm, &row.features, &mut x);
        xs.push(x);
        ys.push(row.stage.index());
    }
    (xs, ys)
}

fn epoch_metrics(
    model: &ModelWeights,
    xs: &[Vec<f64>],
    ys: &[usize],
    class_weights: Option<&[f64]>,
    l2: f64,
) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let loss = batch_loss(model, &refs, ys, class_weights, l2).expect("shapes validated");
    let mut scratch = Scratch::new(&model.spec);
    let last = model.layers.len() - 1;
    let mut correct = 0usize;
    for (x, &y) in xs.iter().zip(ys) {
        forward_logits(model, x, &mut scratch);
        if argmax_severe(scratch.layer_out(last)) == y {
            correct += 1;
        }
    }
    (loss, correct as f64 / xs.len() as f64)
}

/// Trains with Adam over seeded shuffled minibatches. The normalizer is fit
/// on the training rows only; the returned weights are from the epoch with
/// the best validation loss (final epoch when no validation rows are given).
pub fn train(
    spec: &NetworkSpec,
    config: &TrainConfig,
    train_rows: &[Sample],
    val_rows: &[Sample],
) -> Result<(ModelWeights, Vec<EpochStats>)> {
    spec.validate()?;
    config.validate()?;
    if spec.input_dim != FEATURE_COUNT || spec.output_dim != STAGE_COUNT {
        return Err(LadriError::Model(format!(
            "risk classifier requires input_dim {FEATURE_COUNT} and output_dim {STAGE_COUNT}"
        )));
    }
    if train_rows.is_empty() {
        return Err(LadriError::Data("empty training set".into()));
    }

    let norm = fit_normalizer(&train_rows.iter().map(|r| r.features).collect::<Vec<_>>())?;
    let (train_x, train_y) = normalize_rows(&norm, train_rows);
    let (val_x, val_y) = normalize_rows(&norm, val_rows);
    let class_weights = if config.class_weighting {
        Some(inverse_frequency_weights(train_rows, STAGE_COUNT))
    } else {
        None
    };
    let cw = class_weights.as_deref();

    let mut model = ModelWeights::init(spec.clone(), norm, config.seed)?;
    let mut adam = AdamState::new(&model);
    // Shuffle stream decoupled from the init stream, still a pure function
    // of the config seed.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut indices: Vec<usize> = (0..train_rows.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ModelWeights)> = None;

    for epoch in 0..config.epochs {
        shuffle(&mut indices, &mut rng);
        for chunk in indices.chunks(config.batch_size) {
            let batch_x: Vec<&[f64]> = chunk.iter().map(|&i| train_x[i].as_slice()).collect();
            let batch_y: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let (_, grads) = loss_and_grad(&model, &batch_x, &batch_y, cw, config.l2)?;
            adam.update(&mut model, &grads, config);
        }
        let (train_loss, train_accuracy) = epoch_metrics(&model, &train_x, &train_y, cw, config.l2);
        let (val_loss, val_accuracy) = epoch_metrics(&model, &val_x, &val_y, cw, config.l2);
        history.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
        });
        if !val_x.is_empty() && best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
        }
    }

    let final_model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((final_model, history))
}

/// Fisher-Yates with the crate's seeded generator.
fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

/// Multinomial logistic regression trained through the identical data and
/// optimizer path (zero hidden layers).
pub fn train_baseline(
    config: &TrainConfig,
    train_rows: &[Sample],
    val_rows: &[Sample],
) -> Result<(ModelWeights, Vec<EpochStats>)> {
    train(&NetworkSpec::baseline(), config, train_rows, val_rows)
}

/// Predicted stage for a raw (unnormalized) feature vector; the model's own
/// normalization statistics are applied first. Ties break toward the more
/// severe stage.
pub fn predict(model: &ModelWeights, features: &FeatureVector) -> Result<Stage> {
    let probs = predict_proba(model, features)?;
    Ok(Stage::from_index(argmax_severe(&probs)).expect("output_dim validated"))
}

/// Class probabilities for a raw feature vector.
pub fn predict_proba(model: &ModelWeights, features: &FeatureVector) -> Result<Vec<f64>> {
    let mut x = vec![0.0; model.spec.input_dim];
    apply_normalizer_into(&model.norm, features, &mut x);
    model.forward(&x)
}

/// Reusable inference engine: no allocation per prediction after
/// construction.
pub struct Predictor<'a> {
    model: &'a ModelWeights,
    input: Vec<f64>,
    scratch: Scratch,
}

impl<'a> Predictor<'a> {
    pub fn new(model: &'a ModelWeights) -> Result<Self> {
        model.validate()?;
        if model.spec.input_dim != FEATURE_COUNT || model.spec.output_dim != STAGE_COUNT {
            return Err(LadriError::Model("predictor requires the risk-feature contract".into()));
        }
        Ok(Self {
            model,
            input: vec![0.0; model.spec.input_dim],
            scratch: Scratch::new(&model.spec),
        })
    }

    /// Predicted stage and class probabilities for one frame.
    pub fn predict(&mut self, features: &FeatureVector) -> (Stage, &[f64]) {
        apply_normalizer_into(&self.model.norm, features, &mut self.input);
        forward_logits(self.model, &self.input, &mut self.scratch);
        let last = self.model.layers.len() - 1;
        let probs = &mut self.scratch.outs[last];
        softmax_in_place(probs);
        let stage = Stage::from_index(argmax_severe(probs)).expect("output_dim validated");
        (stage, probs)
    }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weights: Vec<String>,
    bias: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    features: Vec<String>,
    spec: NetworkSpec,
    norm_mean: Vec<String>,
    norm_std: Vec<String>,
    layers: Vec<LayerFile>,
}

/// 17 significant decimal digits: enough to reproduce any f64 exactly.
fn encode_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn decode_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| LadriError::Model(format!("unparsable decimal `{s}` in model file")))
}

fn decode_all(values: &[String]) -> Result<Vec<f64>> {
    values.iter().map(|s| decode_f64(s)).collect()
}

/// Serializes a model to the versioned JSON document.
pub fn model_to_json(model: &ModelWeights) -> Result<String> {
    model.validate()?;
    let file = ModelFile {
        format_version: model.format_version,
        features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        spec: model.spec.clone(),
        norm_mean: model.norm.mean.iter().copied().map(encode_f64).collect(),
        norm_std: model.norm.std.iter().copied().map(encode_f64).collect(),
        layers: model
            .layers
            .iter()
            .map(|l| LayerFile {
                rows: l.rows,
                cols: l.cols,
                weights: l.weights.iter().copied().map(encode_f64).collect(),
                bias: l.bias.iter().copied().map(encode_f64).collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Parses and validates the versioned JSON document.
pub fn model_from_json(text: &str) -> Result<ModelWeights> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(LadriError::Version(format!(
            "model format_version {} is not the supported {MODEL_FORMAT_VERSION}",
            file.format_version
        )));
    }
    if file.features != FEATURE_NAMES {
        return Err(LadriError::Version(format!(
            "model feature contract {:?} does not match the current {:?}",
            file.features, FEATURE_NAMES
        )));
    }
    let model = ModelWeights {
        spec: file.spec,
        layers: file
            .layers
            .iter()
            .map(|l| {
                Ok(DenseLayer {
                    rows: l.rows,
                    cols: l.cols,
                    weights: decode_all(&l.weights)?,
                    bias: decode_all(&l.bias)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        norm: NormStats {
            mean: decode_all(&file.norm_mean)?,
            std: decode_all(&file.norm_std)?,
        },
        format_version: file.format_version,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &ModelWeights, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<ModelWeights> {
    let text = std::fs::read_to_string(path)?;
    model_from_json(&text)
}
