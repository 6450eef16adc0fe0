//! Dense multilayer perceptron: parameter layout, local SGD training and the
//! main-task / backdoor accuracy metrics.
//!
//! Parameters are stored as one flat vector. Each layer contributes its weight
//! matrix in `[fan_in][fan_out]` row-major order followed by its bias vector,
//! layers in input-to-output order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Layer widths from input to output. Hidden layers use `activation`, the
/// output layer is a softmax.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelArch {
    layer_dims: Vec<usize>,
    activation: Activation,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerSpan {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub bias: usize,
}

impl ModelArch {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidArch(format!(
                "need at least 2 layer dims, got {}",
                layer_dims.len()
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidArch("layer dims must be positive".into()));
        }
        Ok(Self {
            layer_dims,
            activation,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub(crate) fn layers(&self) -> Vec<LayerSpan> {
        let mut offset = 0;
        self.layer_dims
            .windows(2)
            .map(|w| {
                let span = LayerSpan {
                    fan_in: w[0],
                    fan_out: w[1],
                    weights: offset,
                    bias: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                span
            })
            .collect()
    }
}

/// A model's trainable weights flattened into one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    arch: ModelArch,
}

impl ParameterVector {
    pub fn new(arch: ModelArch, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "architecture has {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self { values, arch })
    }

    pub fn zeros(arch: ModelArch) -> Self {
        let values = vec![0.0; arch.param_count()];
        Self { values, arch }
    }

    /// Same architecture, new values. Length must match.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.arch.clone(), values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn distance(&self, other: &ParameterVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn ensure_same_arch(&self, other: &ParameterVector) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::DimensionMismatch(format!(
                "architectures differ: {:?} vs {:?}",
                self.arch.layer_dims, other.arch.layer_dims
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero step size is accepted so that local training can be switched
        // off; it returns the starting weights untouched.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidTraining(format!(
                "learning rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidTraining("local_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidTraining("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Row-major feature matrix with one integer class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("feature dim must be positive".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values do not form {} rows of width {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        Ok(Self {
            features,
            dim,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn set_label(&mut self, i: usize, label: usize) {
        self.labels[i] = label;
    }

    /// One past the largest label, or 0 when empty.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            dim: self.dim,
            labels,
        }
    }

    pub fn max_feature(&self) -> f64 {
        self.features.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn check_against(&self, arch: &ModelArch) -> Result<()> {
        if self.dim != arch.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "dataset has {} features, model expects {}",
                self.dim,
                arch.input_dim()
            )));
        }
        if self.num_classes() > arch.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "label {} out of range for {} output classes",
                self.num_classes() - 1,
                arch.output_dim()
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_model(arch: &ModelArch, seed: u64) -> ParameterVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; arch.param_count()];
    for layer in arch.layers() {
        let s = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for w in &mut values[layer.weights..layer.bias] {
            *w = rng.random_range(-s..s);
        }
    }
    ParameterVector {
        values,
        arch: arch.clone(),
    }
}

/// Scratch buffers for one forward/backward pass.
pub(crate) struct Workspace {
    layers: Vec<LayerSpan>,
    activation: Activation,
    /// Post-activation outputs of each layer; the last holds softmax probabilities.
    outputs: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    pub(crate) fn new(arch: &ModelArch) -> Self {
        let layers = arch.layers();
        let outputs = layers.iter().map(|l| vec![0.0; l.fan_out]).collect();
        let deltas = layers.iter().map(|l| vec![0.0; l.fan_out]).collect();
        Self {
            layers,
            activation: arch.activation(),
            outputs,
            deltas,
        }
    }

    /// Runs the network on `x` and returns the cross-entropy loss against
    /// `label` (if given). Probabilities are left in the last output buffer.
    pub(crate) fn forward(&mut self, w: &[f64], x: &[f64], label: Option<usize>) -> f64 {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, rest) = self.outputs.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &before[l - 1] };
            let out = &mut rest[0];
            out.copy_from_slice(&w[layer.bias..layer.bias + layer.fan_out]);
            for (i, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &w[layer.weights + i * layer.fan_out..][..layer.fan_out];
                for (o, &wij) in out.iter_mut().zip(row) {
                    *o += xi * wij;
                }
            }
            if l < last {
                for o in out.iter_mut() {
                    *o = self.activation.apply(*o);
                }
            }
        }
        let logits = &mut self.outputs[last];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for z in logits.iter_mut() {
            *z = (*z - max).exp();
            sum += *z;
        }
        let loss = label.map_or(0.0, |y| -(logits[y] / sum).ln());
        for p in logits.iter_mut() {
            *p /= sum;
        }
        loss
    }

    pub(crate) fn probabilities(&self) -> &[f64] {
        self.outputs.last().unwrap()
    }

    pub(crate) fn predicted(&self) -> usize {
        argmax(self.probabilities())
    }

    /// Accumulates d(loss)/dw for the last forward pass into `grad`, scaled by `scale`.
    pub(crate) fn backward(&mut self, w: &[f64], x: &[f64], label: usize, scale: f64, grad: &mut [f64]) {
        let last = self.layers.len() - 1;
        {
            let probs = &self.outputs[last];
            let delta = &mut self.deltas[last];
            for (d, &p) in delta.iter_mut().zip(probs) {
                *d = p * scale;
            }
            delta[label] -= scale;
        }
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let input: &[f64] = if l == 0 { x } else { &self.outputs[l - 1] };
            let delta = &self.deltas[l];
            for (g, &d) in grad[layer.bias..layer.bias + layer.fan_out].iter_mut().zip(delta) {
                *g += d;
            }
            for (i, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &mut grad[layer.weights + i * layer.fan_out..][..layer.fan_out];
                for (g, &d) in row.iter_mut().zip(delta) {
                    *g += xi * d;
                }
            }
            if l > 0 {
                let (lower, upper) = self.deltas.split_at_mut(l);
                let prev = &mut lower[l - 1];
                let delta = &upper[0];
                let prev_out = &self.outputs[l - 1];
                for (i, p) in prev.iter_mut().enumerate() {
                    let row = &w[layer.weights + i * layer.fan_out..][..layer.fan_out];
                    let back: f64 = row.iter().zip(delta).map(|(a, b)| a * b).sum();
                    *p = back * self.activation.derivative_from_output(prev_out[i]);
                }
            }
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities for a single input row.
pub fn probabilities(model: &ParameterVector, x: &[f64]) -> Vec<f64> {
    let mut ws = Workspace::new(model.arch());
    ws.forward(model.values(), x, None);
    ws.probabilities().to_vec()
}

pub fn predict(model: &ParameterVector, x: &[f64]) -> usize {
    let mut ws = Workspace::new(model.arch());
    ws.forward(model.values(), x, None);
    ws.predicted()
}

/// Mean cross-entropy over the whole dataset.
pub fn mean_loss(model: &ParameterVector, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("loss evaluation"));
    }
    data.check_against(model.arch())?;
    let mut ws = Workspace::new(model.arch());
    let total: f64 = (0..data.len())
        .map(|i| ws.forward(model.values(), data.row(i), Some(data.label(i))))
        .sum();
    Ok(total / data.len() as f64)
}

/// Mean cross-entropy over `indices` and its gradient with respect to every parameter.
pub fn loss_and_gradient(
    model: &ParameterVector,
    data: &LabeledDataset,
    indices: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset("gradient evaluation"));
    }
    data.check_against(model.arch())?;
    let mut ws = Workspace::new(model.arch());
    let mut grad = vec![0.0; model.len()];
    let loss = batch_gradient(&mut ws, model.values(), data, indices, &mut grad);
    Ok((loss, grad))
}

fn batch_gradient(
    ws: &mut Workspace,
    w: &[f64],
    data: &LabeledDataset,
    indices: &[usize],
    grad: &mut [f64],
) -> f64 {
    grad.fill(0.0);
    let scale = 1.0 / indices.len() as f64;
    let mut loss = 0.0;
    for &i in indices {
        let x = data.row(i);
        let y = data.label(i);
        loss += ws.forward(w, x, Some(y));
        ws.backward(w, x, y, scale, grad);
    }
    loss * scale
}

/// Customisation points of the local SGD loop. The default implementation is
/// plain mini-batch gradient descent.
pub trait SgdHooks {
    /// +1 descends the loss, -1 ascends it.
    fn direction(&self) -> f64 {
        1.0
    }

    /// Called with the mean mini-batch gradient before the step is applied.
    fn adjust_gradient(&mut self, _w: &[f64], _grad: &mut [f64]) -> Result<()> {
        Ok(())
    }

    fn after_step(&mut self, _w: &mut [f64]) {}

    /// Called after each epoch except the last one.
    fn between_epochs(&mut self, _epoch: usize, _w: &mut [f64]) -> Result<()> {
        Ok(())
    }
}

pub struct PlainSgd;

impl SgdHooks for PlainSgd {}

/// Mini-batch SGD from `start` with caller-supplied hooks.
pub fn train_with_hooks<H: SgdHooks + ?Sized>(
    start: &ParameterVector,
    data: &LabeledDataset,
    cfg: &TrainingConfig,
    hooks: &mut H,
) -> Result<ParameterVector> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("client training data"));
    }
    data.check_against(start.arch())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = start.values().to_vec();
    let mut grad = vec![0.0; w.len()];
    let mut ws = Workspace::new(start.arch());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let step = hooks.direction() * cfg.learning_rate;

    for epoch in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for (batch, indices) in order.chunks(cfg.batch_size).enumerate() {
            let loss = batch_gradient(&mut ws, &w, data, indices, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch });
            }
            hooks.adjust_gradient(&w, &mut grad)?;
            if step != 0.0 {
                for (wi, gi) in w.iter_mut().zip(&grad) {
                    *wi -= step * gi;
                }
            }
            hooks.after_step(&mut w);
        }
        if epoch + 1 < cfg.local_epochs {
            hooks.between_epochs(epoch, &mut w)?;
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            epoch: cfg.local_epochs - 1,
            batch: data.len().div_ceil(cfg.batch_size) - 1,
        });
    }
    Ok(ParameterVector {
        values: w,
        arch: start.arch().clone(),
    })
}

/// Local training of one client starting from the current global model.
pub fn client_update(
    global: &ParameterVector,
    data: &LabeledDataset,
    cfg: &TrainingConfig,
) -> Result<ParameterVector> {
    train_with_hooks(global, data, cfg, &mut PlainSgd)
}

/// Main-task accuracy: fraction of rows whose argmax prediction equals the label.
pub fn evaluate_ma(model: &ParameterVector, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("main-task test set"));
    }
    test.check_against(model.arch())?;
    let mut ws = Workspace::new(model.arch());
    let correct = (0..test.len())
        .filter(|&i| {
            ws.forward(model.values(), test.row(i), None);
            ws.predicted() == test.label(i)
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Backdoor accuracy on an already-triggered test set whose labels are the
/// original ones. Rows whose true label is `target_label` are left out.
pub fn evaluate_ba(
    model: &ParameterVector,
    triggered_test: &LabeledDataset,
    target_label: usize,
) -> Result<f64> {
    if triggered_test.dim() != model.arch().input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} features, model expects {}",
            triggered_test.dim(),
            model.arch().input_dim()
        )));
    }
    let mut ws = Workspace::new(model.arch());
    let mut hits = 0usize;
    let mut total = 0usize;
    for i in 0..triggered_test.len() {
        if triggered_test.label(i) == target_label {
            continue;
        }
        total += 1;
        ws.forward(model.values(), triggered_test.row(i), None);
        if ws.predicted() == target_label {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyDataset(
            "backdoor test set (every row already has the target label)",
        ));
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(dims: &[usize]) -> ModelArch {
        ModelArch::new(dims.to_vec(), Activation::Relu).unwrap()
    }

    /// Bias-only model that always predicts `class`.
    fn constant_model(dims: &[usize], class: usize) -> ParameterVector {
        let a = arch(dims);
        let mut p = ParameterVector::zeros(a.clone());
        let out = a.layers().last().copied().unwrap();
        p.values_mut()[out.bias + class] = 10.0;
        p
    }

    #[test]
    fn rejects_degenerate_architectures() {
        assert!(ModelArch::new(vec![3], Activation::Relu).is_err());
        assert!(ModelArch::new(vec![3, 0, 2], Activation::Relu).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = arch(&[4, 3, 2]);
        assert_eq!(init_model(&a, 7), init_model(&a, 7));
        assert_ne!(init_model(&a, 7), init_model(&a, 8));
    }

    #[test]
    fn parameter_count_follows_layer_dims() {
        let p = init_model(&arch(&[4, 3, 2]), 123);
        assert_eq!(p.len(), 4 * 3 + 3 + 3 * 2 + 2);
        assert_eq!(p.len(), 23);
    }

    #[test]
    fn biases_start_at_zero() {
        let a = arch(&[2, 2]);
        let p = init_model(&a, 0);
        let layer = a.layers()[0];
        assert!(p.values()[layer.bias..].iter().all(|&b| b == 0.0));
        let s = (6.0f64 / 4.0).sqrt();
        assert!(p.values()[..layer.bias].iter().all(|w| w.abs() < s));
    }

    #[test]
    fn parameter_vector_validates_length_and_finiteness() {
        let a = arch(&[2, 2]);
        assert!(ParameterVector::new(a.clone(), vec![0.0; 5]).is_err());
        let mut v = vec![0.0; 6];
        v[3] = f64::NAN;
        assert!(ParameterVector::new(a, v).is_err());
    }

    #[test]
    fn constant_predictor_metrics() {
        let model = constant_model(&[3, 4, 2], 0);
        let zeros = LabeledDataset::new(vec![0.5; 30], 3, vec![0; 10]).unwrap();
        let ones = LabeledDataset::new(vec![0.5; 30], 3, vec![1; 10]).unwrap();
        assert_eq!(evaluate_ma(&model, &zeros).unwrap(), 1.0);
        assert_eq!(evaluate_ma(&model, &ones).unwrap(), 0.0);
    }

    #[test]
    fn ma_rejects_empty_test_set() {
        let model = constant_model(&[3, 2], 0);
        let empty = LabeledDataset::new(vec![], 3, vec![]).unwrap();
        assert!(matches!(evaluate_ma(&model, &empty), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn ba_counts_target_predictions() {
        let always_target = constant_model(&[2, 3], 2);
        let never_target = constant_model(&[2, 3], 1);
        let ds = LabeledDataset::new(vec![1.0; 8], 2, vec![0, 1, 0, 1]).unwrap();
        assert_eq!(evaluate_ba(&always_target, &ds, 2).unwrap(), 1.0);
        assert_eq!(evaluate_ba(&never_target, &ds, 2).unwrap(), 0.0);
    }

    #[test]
    fn ba_excludes_rows_already_in_target_class() {
        // Feature 0 lights up only on the two rows whose true label is the
        // target; the model predicts the target exactly there.
        let a = arch(&[2, 3]);
        let mut model = ParameterVector::zeros(a);
        // weights [in][out]: input 0 -> class 2 strongly, bias favours class 1.
        model.values_mut()[2] = 20.0;
        model.values_mut()[6 + 1] = 1.0;
        let mut features = vec![0.0; 20];
        let mut labels = vec![1; 10];
        for &i in &[3usize, 7] {
            features[i * 2] = 1.0;
            labels[i] = 2;
        }
        let ds = LabeledDataset::new(features, 2, labels).unwrap();
        assert_eq!(predict(&model, ds.row(3)), 2);
        assert_eq!(evaluate_ba(&model, &ds, 2).unwrap(), 0.0);
    }

    #[test]
    fn ba_errors_when_every_row_is_target() {
        let model = constant_model(&[2, 3], 2);
        let ds = LabeledDataset::new(vec![1.0; 4], 2, vec![2, 2]).unwrap();
        assert!(evaluate_ba(&model, &ds, 2).is_err());
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let a = arch(&[3, 5, 2]);
        let g = init_model(&a, 1);
        let ds = LabeledDataset::new((0..30).map(|i| i as f64 / 30.0).collect(), 3, [0, 1].repeat(5))
            .unwrap();
        let cfg = TrainingConfig {
            learning_rate: 0.0,
            local_epochs: 3,
            batch_size: 4,
            seed: 9,
        };
        let out = client_update(&g, &ds, &cfg).unwrap();
        let bits = |p: &ParameterVector| p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&out), bits(&g));
    }

    #[test]
    fn client_update_is_deterministic() {
        let a = arch(&[3, 5, 2]);
        let g = init_model(&a, 1);
        let ds = LabeledDataset::new((0..30).map(|i| (i as f64).sin()).collect(), 3, [0, 1].repeat(5))
            .unwrap();
        let cfg = TrainingConfig {
            learning_rate: 0.1,
            local_epochs: 2,
            batch_size: 3,
            seed: 4,
        };
        assert_eq!(client_update(&g, &ds, &cfg).unwrap(), client_update(&g, &ds, &cfg).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = init_model(&arch(&[3, 2]), 1);
        let ds = LabeledDataset::new(vec![0.0; 8], 4, vec![0, 1]).unwrap();
        let cfg = TrainingConfig {
            learning_rate: 0.1,
            local_epochs: 1,
            batch_size: 1,
            seed: 0,
        };
        assert!(matches!(client_update(&g, &ds, &cfg), Err(Error::DimensionMismatch(_))));
        let bad_labels = LabeledDataset::new(vec![0.0; 6], 3, vec![0, 5]).unwrap();
        assert!(matches!(
            client_update(&g, &bad_labels, &cfg),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn divergence_is_caught() {
        let a = arch(&[2, 8, 2]);
        let g = init_model(&a, 3);
        let ds = LabeledDataset::new(vec![1e3, -1e3, -1e3, 1e3], 2, vec![0, 1]).unwrap();
        let cfg = TrainingConfig {
            learning_rate: 1e6,
            local_epochs: 50,
            batch_size: 1,
            seed: 0,
        };
        assert!(matches!(client_update(&g, &ds, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let a = ModelArch::new(vec![5, 7, 4], Activation::Tanh).unwrap();
        let model = init_model(&a, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let s: f64 = probabilities(&model, &x).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
