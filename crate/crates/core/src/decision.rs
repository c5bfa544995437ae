//! Label decision: turning a score vector into a label set.
//!
//! Two baselines (top-k and a single global threshold, both picked on a
//! validation split) and two learned heads that sit on the frozen
//! predictor's penultimate features: a label-count classifier and a
//! per-class threshold regressor.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalPair};
use crate::nn::{train_loop, Mlp, SgdConfig};
use crate::predictor::{predict_penultimate, predict_scores, PredictorModel};
use crate::rng::{rng_from_seed, sub_seed, Stream};

/// Candidate `k` values for the top-k baseline.
pub const TOP_K_GRID: std::ops::RangeInclusive<usize> = 1..=10;

/// Number of candidate values for the global threshold baseline.
pub const THRESHOLD_GRID_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DecisionHead {
    /// Classifies the label count into `{1, ..., max_labels}`.
    Count { max_labels: usize },
    /// Regresses one threshold per class.
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionModel {
    pub head: DecisionHead,
    pub input_dim: usize,
    pub vocab_size: usize,
    pub net: Mlp,
}

impl DecisionModel {
    pub fn init(head: DecisionHead, input_dim: usize, vocab_size: usize, hidden: [usize; 2], seed: u64) -> Self {
        let out = match head {
            DecisionHead::Count { max_labels } => max_labels,
            DecisionHead::Threshold => vocab_size,
        };
        let mut rng = rng_from_seed(sub_seed(seed, Stream::DecisionInit));
        DecisionModel {
            head,
            input_dim,
            vocab_size,
            net: Mlp::init(&[input_dim, hidden[0], hidden[1], out], &mut rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let out = match self.head {
            DecisionHead::Count { max_labels } if max_labels >= 1 => max_labels,
            DecisionHead::Count { .. } => {
                return Err(Error::Checkpoint("count head needs max_labels >= 1".into()))
            }
            DecisionHead::Threshold => self.vocab_size,
        };
        if self.net.input_dim() != self.input_dim || self.net.output_dim() != out {
            return Err(Error::Checkpoint("decision head shapes do not match".into()));
        }
        Ok(())
    }

    /// Raw head output: count logits or per-class thresholds.
    pub fn output(&self, penultimate: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward(penultimate)?.output().to_vec())
    }

    /// Predicted label count in `[1, max_labels]`; ties go to the smaller count.
    pub fn predicted_count(&self, penultimate: &[f64]) -> Result<usize> {
        let logits = self.output(penultimate)?;
        Ok(argmax_first(&logits) + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecisionRule {
    TopK(usize),
    GlobalThreshold(f64),
    LearnedCount(DecisionModel),
    LearnedThreshold(DecisionModel),
}

impl DecisionRule {
    pub fn name(&self) -> String {
        match self {
            DecisionRule::TopK(k) => format!("top_k(k={k})"),
            DecisionRule::GlobalThreshold(t) => format!("global_threshold(theta={t:.6})"),
            DecisionRule::LearnedCount(_) => "learned_count".into(),
            DecisionRule::LearnedThreshold(_) => "learned_threshold".into(),
        }
    }
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// The `k` highest scores; ties go to the lower label index.
pub fn top_k(scores: &[f64], k: usize) -> LabelSet {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k.min(scores.len()));
    LabelSet::new(idx, scores.len()).expect("indices in range")
}

fn above(scores: &[f64], thresholds: impl Fn(usize) -> f64) -> LabelSet {
    LabelSet::new((0..scores.len()).filter(|&k| scores[k] > thresholds(k)), scores.len())
        .expect("indices in range")
}

pub fn decide(rule: &DecisionRule, scores: &[f64], penultimate: &[f64]) -> Result<LabelSet> {
    let k = scores.len();
    match rule {
        DecisionRule::TopK(n) => {
            if *n == 0 || *n > k {
                return Err(Error::InvalidArgument(format!("top-k with k={n} for {k} labels")));
            }
            Ok(top_k(scores, *n))
        }
        DecisionRule::GlobalThreshold(t) => Ok(above(scores, |_| *t)),
        DecisionRule::LearnedCount(model) => {
            check_head(model, k)?;
            Ok(top_k(scores, model.predicted_count(penultimate)?))
        }
        DecisionRule::LearnedThreshold(model) => {
            check_head(model, k)?;
            let theta = model.output(penultimate)?;
            Ok(above(scores, |j| theta[j]))
        }
    }
}

fn check_head(model: &DecisionModel, k: usize) -> Result<()> {
    if model.vocab_size != k {
        return Err(Error::DimensionMismatch {
            expected: model.vocab_size,
            got: k,
        });
    }
    Ok(())
}

/// Softmax cross-entropy of count logits against a 1-based count target.
pub fn count_loss(logits: &[f64], target_count: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    let t = target_count - 1;
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    grad[t] -= 1.0;
    (lse - logits[t], grad)
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(f_k − θ_k)` against label membership,
/// summed over classes. Returns the value and its gradient with respect to
/// the thresholds.
pub fn threshold_loss(scores: &[f64], thresholds: &[f64], labels: &LabelSet) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (k, (&f, &t)) in scores.iter().zip(thresholds).enumerate() {
        let z = f - t;
        let y = if labels.contains(k) { 1.0 } else { 0.0 };
        value += if y == 1.0 { softplus(-z) } else { softplus(z) };
        grad.push(y - sigmoid(z));
    }
    (value, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionConfig {
    pub hidden: [usize; 2],
    pub max_labels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig {
            hidden: [100, 10],
            max_labels: 4,
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 5e-5,
            seed: 0,
        }
    }
}

impl DecisionConfig {
    fn sgd(&self) -> SgdConfig {
        SgdConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTrainingLog {
    pub head: DecisionHead,
    pub epoch_losses: Vec<f64>,
}

fn frozen_inputs(ds: &Dataset, predictor: &PredictorModel) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    ds.check_trainable()?;
    Ok((predict_scores(predictor, ds)?, predict_penultimate(predictor, ds)?))
}

/// Trains the label-count head on the predictor's penultimate features.
/// Targets are `min(|Y|, max_labels)`. The predictor is only read.
pub fn train_count_head(
    ds: &Dataset,
    predictor: &PredictorModel,
    cfg: &DecisionConfig,
) -> Result<(DecisionModel, HeadTrainingLog)> {
    if cfg.max_labels == 0 {
        return Err(Error::InvalidArgument("max_labels must be at least 1".into()));
    }
    let (_, pen) = frozen_inputs(ds, predictor)?;
    let head = DecisionHead::Count {
        max_labels: cfg.max_labels,
    };
    let mut model = DecisionModel::init(head, predictor.penultimate_dim(), ds.vocab_size, cfg.hidden, cfg.seed);
    let inputs: Vec<&[f64]> = pen.iter().map(Vec::as_slice).collect();
    let mut rng = rng_from_seed(sub_seed(cfg.seed, Stream::DecisionShuffle));
    let epoch_losses = train_loop(&mut model.net, &inputs, &cfg.sgd(), &mut rng, |i, logits| {
        Ok(count_loss(logits, count_target(&ds.samples[i].labels, cfg.max_labels)))
    })?;
    Ok((model, HeadTrainingLog { head, epoch_losses }))
}

/// Training target of the count head for a label set.
pub fn count_target(labels: &LabelSet, max_labels: usize) -> usize {
    labels.len().clamp(1, max_labels)
}

/// Trains the per-class threshold head. Predictor scores enter the loss as
/// constants; only the head's parameters are updated.
pub fn train_threshold_head(
    ds: &Dataset,
    predictor: &PredictorModel,
    cfg: &DecisionConfig,
) -> Result<(DecisionModel, HeadTrainingLog)> {
    let (scores, pen) = frozen_inputs(ds, predictor)?;
    let head = DecisionHead::Threshold;
    let mut model = DecisionModel::init(head, predictor.penultimate_dim(), ds.vocab_size, cfg.hidden, cfg.seed);
    let inputs: Vec<&[f64]> = pen.iter().map(Vec::as_slice).collect();
    let mut rng = rng_from_seed(sub_seed(cfg.seed, Stream::DecisionShuffle));
    let epoch_losses = train_loop(&mut model.net, &inputs, &cfg.sgd(), &mut rng, |i, theta| {
        Ok(threshold_loss(&scores[i], theta, &ds.samples[i].labels))
    })?;
    Ok((model, HeadTrainingLog { head, epoch_losses }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    TopK,
    GlobalThreshold,
}

/// Equally spaced candidate thresholds from the smallest to the largest score.
pub fn threshold_grid(scores: &[Vec<f64>], n_points: usize) -> Vec<f64> {
    let (lo, hi) = scores
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if n_points <= 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n_points - 1) as f64;
    (0..n_points).map(|i| if i + 1 == n_points { hi } else { lo + step * i as f64 }).collect()
}

/// Grid search of a baseline rule on validation data, maximizing macro-F1.
/// Ties go to the smaller `k` or the larger threshold.
pub fn cross_validate_rule(kind: BaselineKind, val_scores: &[Vec<f64>], val_labels: &[LabelSet]) -> Result<DecisionRule> {
    if val_scores.is_empty() || val_scores.len() != val_labels.len() {
        return Err(Error::InvalidArgument(
            "validation scores and labels must be nonempty and aligned".into(),
        ));
    }
    let k = val_scores[0].len();
    let f1_of = |pred: Vec<LabelSet>| -> Result<f64> {
        let pairs: Vec<EvalPair> = pred
            .into_iter()
            .zip(val_labels)
            .map(|(predicted, truth)| EvalPair {
                predicted,
                truth: truth.clone(),
            })
            .collect();
        Ok(metrics::evaluate(&pairs, k)?.macro_f1)
    };
    let mut best: Option<(f64, DecisionRule)> = None;
    match kind {
        BaselineKind::TopK => {
            for n in TOP_K_GRID.filter(|&n| n <= k) {
                let f1 = f1_of(val_scores.iter().map(|s| top_k(s, n)).collect())?;
                if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                    best = Some((f1, DecisionRule::TopK(n)));
                }
            }
        }
        BaselineKind::GlobalThreshold => {
            for &t in threshold_grid(val_scores, THRESHOLD_GRID_POINTS).iter().rev() {
                let f1 = f1_of(val_scores.iter().map(|s| above(s, |_| t)).collect())?;
                if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                    best = Some((f1, DecisionRule::GlobalThreshold(t)));
                }
            }
        }
    }
    Ok(best.expect("grid is nonempty").1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::predictor::Architecture;

    fn set(labels: &[usize], k: usize) -> LabelSet {
        LabelSet::from_one_based(labels.iter().copied(), k).unwrap()
    }

    const SCORES: [f64; 3] = [0.9, 0.1, 0.5];

    #[test]
    fn top_k_example() {
        assert_eq!(decide(&DecisionRule::TopK(2), &SCORES, &[]).unwrap(), set(&[1, 3], 3));
        assert!(decide(&DecisionRule::TopK(4), &SCORES, &[]).is_err());
        assert_eq!(top_k(&[1.0, 1.0, 1.0], 2), set(&[1, 2], 3));
    }

    #[test]
    fn global_threshold_is_strict() {
        assert_eq!(
            decide(&DecisionRule::GlobalThreshold(0.5), &SCORES, &[]).unwrap(),
            set(&[1], 3)
        );
        assert!(decide(&DecisionRule::GlobalThreshold(2.0), &SCORES, &[]).unwrap().is_empty());
    }

    fn constant_head(head: DecisionHead, out_bias: Vec<f64>) -> DecisionModel {
        let mut m = DecisionModel::init(head, 2, 3, [4, 3], 0);
        let last = m.net.layers.len() - 1;
        m.net.layers[last].weight.iter_mut().for_each(|w| *w = 0.0);
        m.net.layers[last].bias = out_bias;
        m
    }

    #[test]
    fn learned_threshold_example() {
        let m = constant_head(DecisionHead::Threshold, vec![0.0, 0.0, 1.0]);
        let rule = DecisionRule::LearnedThreshold(m);
        // 0.9 > 0 and 0.1 > 0; 0.5 is not above 1.
        assert_eq!(decide(&rule, &SCORES, &[0.3, -0.2]).unwrap(), set(&[1, 2], 3));
        let m = constant_head(DecisionHead::Threshold, vec![0.5, 0.5, 0.5]);
        let rule = DecisionRule::LearnedThreshold(m);
        assert_eq!(decide(&rule, &SCORES, &[0.3, -0.2]).unwrap(), set(&[1], 3));
    }

    #[test]
    fn learned_count_ties_take_smaller() {
        let m = constant_head(DecisionHead::Count { max_labels: 4 }, vec![0.0, 2.0, 2.0, 1.0]);
        assert_eq!(m.predicted_count(&[1.0, 1.0]).unwrap(), 2);
        let rule = DecisionRule::LearnedCount(m);
        assert_eq!(decide(&rule, &SCORES, &[1.0, 1.0]).unwrap(), set(&[1, 3], 3));
    }

    #[test]
    fn count_loss_uniform_is_log_n() {
        let (v, g) = count_loss(&[0.3; 4], 2);
        assert!((v - 4f64.ln()).abs() < 1e-14);
        assert!(g.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn count_target_is_capped() {
        assert_eq!(count_target(&set(&[1, 2, 3, 4, 5, 6, 7], 9), 4), 4);
        assert_eq!(count_target(&set(&[2], 9), 4), 1);
    }

    #[test]
    fn threshold_loss_examples() {
        let (v, _) = threshold_loss(&[1.5], &[1.5], &set(&[1], 2));
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        let (v, _) = threshold_loss(&[1.5], &[1.5], &LabelSet::empty());
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        let (v, _) = threshold_loss(&[20.0], &[0.0], &set(&[1], 2));
        assert!(v <= 1e-8);
    }

    #[test]
    fn cv_top_k_recovers_label_count() {
        let mut rng = rng_from_seed(3);
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            let truth: Vec<usize> = vec![i % 6, (i + 2) % 6, (i + 4) % 6];
            let s: Vec<f64> = (0..6)
                .map(|k| {
                    let base = if truth.contains(&k) { 2.0 } else { 0.0 };
                    base + rand::Rng::random::<f64>(&mut rng)
                })
                .collect();
            scores.push(s);
            labels.push(LabelSet::new(truth, 6).unwrap());
        }
        assert_eq!(
            cross_validate_rule(BaselineKind::TopK, &scores, &labels).unwrap(),
            DecisionRule::TopK(3)
        );
    }

    #[test]
    fn cv_handles_constant_scores() {
        let scores = vec![vec![0.5; 3]; 4];
        let labels = vec![set(&[1], 3); 4];
        for kind in [BaselineKind::TopK, BaselineKind::GlobalThreshold] {
            cross_validate_rule(kind, &scores, &labels).unwrap();
        }
    }

    #[test]
    fn threshold_grid_endpoints() {
        let g = threshold_grid(&[vec![-1.0, 3.0], vec![0.5, 2.0]], 50);
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[49], 3.0);
    }

    #[test]
    fn heads_leave_predictor_untouched() {
        let ds = crate::data::generate_synthetic(&crate::data::SyntheticSpec {
            dist: crate::data::LabelDistribution::independent(vec![0.5, 0.4, 0.6]).unwrap(),
            n_samples: 60,
            feature_dim: 4,
            feature_mode: crate::data::FeatureMode::ClusterPerSubset,
            noise_sigma: 0.1,
            seed: 1,
        })
        .unwrap()
        .trainable();
        let p = PredictorModel::init(Architecture::Mlp { hidden: 8 }, 4, 3, &mut rng_from_seed(1));
        let before = p.clone();
        let cfg = DecisionConfig {
            epochs: 2,
            hidden: [6, 4],
            ..DecisionConfig::default()
        };
        train_threshold_head(&ds, &p, &cfg).unwrap();
        train_count_head(&ds, &p, &cfg).unwrap();
        assert_eq!(p, before);
    }
}
