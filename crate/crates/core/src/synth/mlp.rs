//! A small fully connected network `1 -> h -> h -> k` with ReLU hidden layers and
//! a softmax output, trained by minibatch SGD with momentum.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::softmax;
use crate::error::{Error, Result};
use crate::focal::LossSpec;
use crate::simplex::ProbVector;
use crate::synth::distribution::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct LayerShape {
    n_in: usize,
    n_out: usize,
    /// Offset of the row-major `n_out x n_in` weight block; biases follow it.
    offset: usize,
}

impl LayerShape {
    fn bias_offset(&self) -> usize {
        self.offset + self.n_in * self.n_out
    }

    fn len(&self) -> usize {
        (self.n_in + 1) * self.n_out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
    pub activation: Activation,
    pub seed: u64,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Forward-pass intermediates needed by backprop.
struct Trace {
    /// Layer inputs: `acts[0]` is the network input, `acts[l]` the post-ReLU output of layer `l - 1`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of every layer; the last one holds the logits.
    pre: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(hidden: usize, k: usize, seed: u64) -> Self {
        let widths = [1, hidden, hidden, k];
        let mut layers = Vec::with_capacity(3);
        let mut offset = 0;
        for w in widths.windows(2) {
            let shape = LayerShape { n_in: w[0], n_out: w[1], offset };
            offset += shape.len();
            layers.push(shape);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(offset);
        for l in &layers {
            let bound = 1.0 / (l.n_in as f64).sqrt();
            params.extend((0..l.len()).map(|_| rng.random_range(-bound..bound)));
        }
        Self { layers, params, activation: Activation::Relu, seed, loss_history: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].n_out
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn trace(&self, x: f64) -> Trace {
        let mut acts = vec![vec![x]];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (li, l) in self.layers.iter().enumerate() {
            let input = &acts[li];
            let w = &self.params[l.offset..l.bias_offset()];
            let b = &self.params[l.bias_offset()..l.bias_offset() + l.n_out];
            let z: Vec<f64> = (0..l.n_out)
                .map(|o| {
                    let row = &w[o * l.n_in..(o + 1) * l.n_in];
                    b[o] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>()
                })
                .collect();
            if li + 1 < self.layers.len() {
                acts.push(z.iter().map(|v| v.max(0.0)).collect());
            }
            pre.push(z);
        }
        Trace { acts, pre }
    }

    pub fn logits(&self, x: f64) -> Vec<f64> {
        self.trace(x).pre.pop().expect("network has layers")
    }

    pub fn predict(&self, x: f64) -> ProbVector {
        ProbVector::from_raw(softmax(&self.logits(x)))
    }

    /// Loss of one sample and its gradient accumulated into `grad` (scaled by `scale`).
    fn backprop(&self, sample: &Sample, loss: &LossSpec, scale: f64, grad: &mut [f64]) -> f64 {
        let trace = self.trace(sample.x);
        let logits = trace.pre.last().expect("network has layers");
        let (value, mut delta) = loss_and_logit_grad(logits, sample.y, loss);
        for (li, l) in self.layers.iter().enumerate().rev() {
            let input = &trace.acts[li];
            let bo = l.bias_offset();
            for o in 0..l.n_out {
                let d = delta[o] * scale;
                grad[bo + o] += d;
                let row = l.offset + o * l.n_in;
                for (i, a) in input.iter().enumerate() {
                    grad[row + i] += d * a;
                }
            }
            if li == 0 {
                break;
            }
            let w = &self.params[l.offset..bo];
            let below = &trace.pre[li - 1];
            delta = (0..l.n_in)
                .map(|i| {
                    if below[i] <= 0.0 {
                        return 0.0;
                    }
                    (0..l.n_out).map(|o| w[o * l.n_in + i] * delta[o]).sum()
                })
                .collect();
        }
        value
    }

    /// Loss of one sample and the full parameter gradient.
    pub fn sample_gradient(&self, sample: &Sample, loss: &LossSpec) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let value = self.backprop(sample, loss, 1.0, &mut grad);
        (value, grad)
    }

    pub fn sample_loss(&self, sample: &Sample, loss: &LossSpec) -> f64 {
        loss_and_logit_grad(&self.logits(sample.x), sample.y, loss).0
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - lse).collect()
}

/// Per-sample loss and its gradient with respect to the logits.
///
/// Cross-entropy (and focal with gamma 0) uses `p - e_y`. The focal gradient is
/// `A (e_y - p)` with `A = gamma (1 - p_y)^(gamma - 1) p_y log p_y - (1 - p_y)^gamma`,
/// i.e. `d loss / d p_y` chained through the softmax Jacobian.
pub fn loss_and_logit_grad(logits: &[f64], y: usize, loss: &LossSpec) -> (f64, Vec<f64>) {
    if loss.is_cross_entropy() {
        cross_entropy_logit_grad(logits, y)
    } else {
        focal_logit_grad(logits, y, loss.effective_gamma().value())
    }
}

pub(crate) fn cross_entropy_logit_grad(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let lp = log_softmax(logits);
    let grad = lp
        .iter()
        .enumerate()
        .map(|(j, l)| l.exp() - if j == y { 1.0 } else { 0.0 })
        .collect();
    (-lp[y], grad)
}

/// General focal form, valid for every gamma >= 0 including 0.
pub(crate) fn focal_logit_grad(logits: &[f64], y: usize, g: f64) -> (f64, Vec<f64>) {
    let lp = log_softmax(logits);
    let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
    let log_py = lp[y];
    let py = p[y];
    // 1 - p_y from the other classes keeps precision when p_y is close to 1.
    let om: f64 = p.iter().enumerate().filter(|(j, _)| *j != y).map(|(_, v)| v).sum();
    let value = -om.powf(g) * log_py;
    let log_term = if g == 0.0 || om == 0.0 { 0.0 } else { g * om.powf(g - 1.0) * py * log_py };
    let a = log_term - om.powf(g);
    let grad = p
        .iter()
        .enumerate()
        .map(|(j, pj)| a * (if j == y { 1.0 } else { 0.0 } - pj))
        .collect();
    (value, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// lr 0.01, momentum 0.9, weight decay 1e-3, 50 epochs, batch 64, width 64.
    pub fn new(loss: LossSpec, seed: u64) -> Self {
        Self {
            loss,
            epochs: 50,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-3,
            hidden: 64,
            seed,
        }
    }

    // negated comparisons so NaN fails validation
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("epochs, batch_size and hidden must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning_rate must be > 0 and weight_decay >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// Minibatch SGD with heavy-ball momentum (`v = mu v + g; w -= lr v`) and L2 weight
/// decay folded into the gradient. Data order is reshuffled every epoch from `config.seed`.
pub fn train_mlp(data: &[Sample], k: usize, config: &TrainConfig) -> Result<MlpModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if let Some(s) = data.iter().find(|s| s.y >= k || !s.x.is_finite()) {
        return Err(Error::Domain(format!("bad training sample {s:?} for k = {k}")));
    }
    let mut model = MlpModel::new(config.hidden, k, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let n_params = model.params.len();
    let mut velocity = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                epoch_loss += model.backprop(&data[i], &config.loss, scale, &mut grad);
            }
            for ((w, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                let step = g + config.weight_decay * *w;
                *v = config.momentum * *v + step;
                *w -= config.learning_rate * *v;
            }
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        model.loss_history.push(mean);
    }
    Ok(model)
}

/// Step used by [`grad_check`] for central differences.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Floor on the denominator of the relative error, so parameters with
/// (near) zero gradient are compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest relative error `|a - n| / max(|a|, |n|, floor)` between the backprop
/// gradient `a` and central finite differences `n` over all parameters.
pub fn grad_check(model: &MlpModel, loss: &LossSpec, sample: &Sample) -> f64 {
    let (_, analytic) = model.sample_gradient(sample, loss);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let orig = probe.params[i];
        probe.params[i] = orig + GRAD_CHECK_STEP;
        let up = probe.sample_loss(sample, loss);
        probe.params[i] = orig - GRAD_CHECK_STEP;
        let down = probe.sample_loss(sample, loss);
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
