//! Label prediction model: a linear map or a one-hidden-layer ReLU network
//! from features to per-label scores, trained by mini-batch SGD under any of
//! the ranking losses.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, LossKind, WarpWeight};
use crate::nn::{train_loop, Mlp, SgdConfig};
use crate::rng::{rng_from_seed, sub_seed, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Mlp { hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub architecture: Architecture,
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub net: Mlp,
}

impl PredictorModel {
    pub fn init(architecture: Architecture, feature_dim: usize, vocab_size: usize, rng: &mut Rng) -> Self {
        let sizes: Vec<usize> = match architecture {
            Architecture::Linear => vec![feature_dim, vocab_size],
            Architecture::Mlp { hidden } => vec![feature_dim, hidden, vocab_size],
        };
        PredictorModel {
            architecture,
            feature_dim,
            vocab_size,
            net: Mlp::init(&sizes, rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let expected_layers = match self.architecture {
            Architecture::Linear => 1,
            Architecture::Mlp { .. } => 2,
        };
        if self.net.layers.len() != expected_layers
            || self.net.input_dim() != self.feature_dim
            || self.net.output_dim() != self.vocab_size
        {
            return Err(Error::Checkpoint("predictor shapes do not match its architecture".into()));
        }
        if let Architecture::Mlp { hidden } = self.architecture {
            if self.net.layers[0].outputs != hidden {
                return Err(Error::Checkpoint("hidden size does not match architecture".into()));
            }
        }
        Ok(())
    }

    /// Scores and penultimate features (the input itself for the linear model,
    /// the hidden activation otherwise).
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.net.forward(x)?;
        Ok((trace.output().to_vec(), trace.penultimate().to_vec()))
    }

    pub fn penultimate_dim(&self) -> usize {
        self.net.layers[self.net.layers.len() - 1].inputs
    }

    /// Loss on one sample and its gradient with respect to all parameters,
    /// flattened in [`Mlp::flat_params`] order.
    pub fn loss_gradient(
        &self,
        x: &[f64],
        labels: &LabelSet,
        kind: LossKind,
        loss_cfg: &LossConfig,
        rng: &mut Rng,
    ) -> Result<(f64, Vec<f64>)> {
        let trace = self.net.forward(x)?;
        let r = losses::evaluate(kind, trace.output(), labels, loss_cfg, rng)?;
        let mut g = self.net.zeros_like();
        self.net.backward(&trace, &r.grad, 1.0, &mut g);
        Ok((r.value, g.flat_params()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub sample_budget: usize,
    pub margin: f64,
    pub warp_weight: WarpWeight,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Lsep,
            architecture: Architecture::default(),
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 5e-5,
            sample_budget: losses::DEFAULT_SAMPLE_BUDGET,
            margin: losses::DEFAULT_MARGIN,
            warp_weight: WarpWeight::Harmonic,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            sample_budget: self.sample_budget,
            warp_weight: self.warp_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub loss: LossKind,
    pub epoch_losses: Vec<f64>,
}

/// Trains a freshly initialized predictor.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(PredictorModel, TrainingLog)> {
    let mut init_rng = rng_from_seed(sub_seed(cfg.seed, Stream::Init));
    let model = PredictorModel::init(cfg.architecture, ds.feature_dim, ds.vocab_size, &mut init_rng);
    train_from(model, ds, cfg)
}

/// Continues training `model`.
pub fn train_from(
    mut model: PredictorModel,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(PredictorModel, TrainingLog)> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    ds.check_trainable()?;
    if ds.feature_dim != model.feature_dim || ds.vocab_size != model.vocab_size {
        return Err(Error::DimensionMismatch {
            expected: model.feature_dim,
            got: ds.feature_dim,
        });
    }
    if cfg.sample_budget == 0 {
        return Err(Error::InvalidArgument("sample_budget must be at least 1".into()));
    }
    let mut shuffle_rng = rng_from_seed(sub_seed(cfg.seed, Stream::Shuffle));
    let mut sampling_rng = rng_from_seed(sub_seed(cfg.seed, Stream::Sampling));
    let loss_cfg = cfg.loss_config();
    let inputs: Vec<&[f64]> = ds.samples.iter().map(|s| s.features.as_slice()).collect();
    let epoch_losses = train_loop(&mut model.net, &inputs, &cfg.sgd(), &mut shuffle_rng, |i, scores| {
        let r = losses::evaluate(cfg.loss, scores, &ds.samples[i].labels, &loss_cfg, &mut sampling_rng)?;
        Ok((r.value, r.grad))
    })?;
    Ok((
        model,
        TrainingLog {
            loss: cfg.loss,
            epoch_losses,
        },
    ))
}

/// Scores for every sample, in dataset order.
pub fn predict_scores(model: &PredictorModel, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    ds.samples
        .iter()
        .map(|s| model.forward(&s.features).map(|(scores, _)| scores))
        .collect()
}

/// Penultimate features for every sample, in dataset order.
pub fn predict_penultimate(model: &PredictorModel, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    ds.samples
        .iter()
        .map(|s| model.forward(&s.features).map(|(_, h)| h))
        .collect()
}
