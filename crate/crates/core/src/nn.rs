//! Small fully connected networks with manual backprop, and the
//! SGD-with-momentum loop shared by the predictor and the decision heads.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Affine layer `y = W x + b` with `W` stored row-major (`outputs × inputs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            inputs,
            outputs,
            weight: (0..inputs * outputs)
                .map(|_| rng.random_range(-limit..=limit))
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.weight.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::Checkpoint(format!(
                "layer {}x{} has {} weights and {} biases",
                self.outputs,
                self.inputs,
                self.weight.len(),
                self.bias.len()
            )));
        }
        if self.weight.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Stack of dense layers with ReLU between consecutive layers and a linear
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward`]. `acts[0]` is the input,
/// `acts[i]` the (post-ReLU) input to layer `i`, and the last entry the
/// output.
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an input")
    }

    /// Input to the last layer.
    pub fn penultimate(&self) -> &[f64] {
        &self.acts[self.acts.len() - 2]
    }
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`.
    pub fn init(sizes: &[usize], rng: &mut Rng) -> Self {
        Mlp {
            layers: sizes.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Checkpoint("network has no layers".into()));
        }
        for (a, b) in self.layers.iter().zip(self.layers.iter().skip(1)) {
            if a.outputs != b.inputs {
                return Err(Error::Checkpoint(format!(
                    "layer output {} does not feed next input {}",
                    a.outputs, b.inputs
                )));
            }
        }
        self.layers.iter().try_for_each(Dense::check)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(&acts[i]);
            if i < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        Ok(Trace { acts })
    }

    /// Adds `scale · ∂(grad_out · output)/∂θ` into `grads`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], scale: f64, grads: &mut Mlp) {
        let mut delta: Vec<f64> = grad_out.iter().map(|g| g * scale).collect();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &trace.acts[i];
            let g = &mut grads.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &a) in row.iter_mut().zip(input) {
                    *w += d * a;
                }
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // ReLU mask: the input to layer i is relu(z), zero where inactive.
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Vec::len).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().flatten().copied().collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *it.next().expect("flat parameter vector too short");
            }
        }
    }

    fn fill_zero(&mut self) {
        self.tensors_mut().for_each(|t| t.iter_mut().for_each(|v| *v = 0.0));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be finite and nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Heavy-ball SGD with L2 weight decay:
/// `v ← μ v − η (g + λ θ)`, `θ ← θ + v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    cfg: SgdConfig,
    velocity: Mlp,
}

impl Sgd {
    pub fn new(model: &Mlp, cfg: SgdConfig) -> Self {
        Sgd {
            cfg,
            velocity: model.zeros_like(),
        }
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &Mlp) {
        let SgdConfig {
            learning_rate: lr,
            momentum,
            weight_decay,
            ..
        } = self.cfg;
        for ((theta, g), v) in model
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.velocity.tensors_mut())
        {
            for ((t, &gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = momentum * *vi - lr * (gi + weight_decay * *t);
                *t += *vi;
            }
        }
    }
}

/// Mini-batch training driver.
///
/// Each epoch visits every index in `0..n` exactly once in a shuffled order.
/// `sample_loss(i, output)` returns the loss of sample `i` and its gradient
/// with respect to the network output. Batch gradients are means over the
/// batch. Returns the mean training loss of every epoch.
pub fn train_loop<F>(
    model: &mut Mlp,
    inputs: &[&[f64]],
    cfg: &SgdConfig,
    shuffle_rng: &mut Rng,
    mut sample_loss: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let n = inputs.len();
    let mut opt = Sgd::new(model, *cfg);
    let mut grads = model.zeros_like();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(shuffle_rng);
        let mut total = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let trace = model.forward(inputs[i])?;
                let (loss, g) = sample_loss(i, trace.output())?;
                batch_loss += loss;
                model.backward(&trace, &g, scale, &mut grads);
            }
            let mean = batch_loss * scale;
            if !mean.is_finite() || grads.tensors().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: batch_no + 1,
                    loss: mean,
                });
            }
            total += batch_loss;
            opt.step(model, &grads);
        }
        epoch_losses.push(if n == 0 { 0.0 } else { total / n as f64 });
    }
    Ok(epoch_losses)
}
