//! Pairwise ranking losses and the multi-label softmax baseline.
//!
//! Every loss returns its value together with the gradient with respect to
//! the score vector `f(x)`. Pair lists hold `(u, v)` with `u` a positive and
//! `v` a negative label, both 0-based.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::LabelSet;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Default pair budget per sample for negative sampling.
pub const DEFAULT_SAMPLE_BUDGET: usize = 1000;

/// Default ranking margin.
pub const DEFAULT_MARGIN: f64 = 1.0;

/// Exponents of the exponential pairwise loss are clamped here before `exp`.
pub const BPMLL_EXP_CAP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSample {
    pub pairs: Vec<(usize, usize)>,
}

impl PairSample {
    /// Every `(positive, negative)` pair, ascending by positive then negative.
    pub fn full(labels: &LabelSet, vocab_size: usize) -> Self {
        let neg = labels.complement(vocab_size);
        PairSample {
            pairs: labels
                .iter()
                .flat_map(|u| neg.iter().map(move |&v| (u, v)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Set when an exponent was clamped (exponential loss only).
    pub clamped: bool,
}

impl LossResult {
    fn zero(k: usize) -> Self {
        LossResult {
            value: 0.0,
            grad: vec![0.0; k],
            clamped: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Lsep,
    Hinge,
    Warp,
    Bpmll,
    Softmax,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Lsep,
        LossKind::Hinge,
        LossKind::Warp,
        LossKind::Bpmll,
        LossKind::Softmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Lsep => "lsep",
            LossKind::Hinge => "hinge",
            LossKind::Warp => "warp",
            LossKind::Bpmll => "bpmll",
            LossKind::Softmax => "softmax",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss kind {s:?}")))
    }
}

/// Rank weighting for the weighted hinge loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpWeight {
    /// `w(r) = 1 + 1/2 + ... + 1/r`
    #[default]
    Harmonic,
    /// `w(r) = 1`, which reduces to the plain hinge loss.
    Uniform,
}

impl WarpWeight {
    pub fn weight(self, rank: usize) -> f64 {
        match self {
            WarpWeight::Harmonic => (1..=rank).map(|j| 1.0 / j as f64).sum(),
            WarpWeight::Uniform => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub sample_budget: usize,
    pub warp_weight: WarpWeight,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: DEFAULT_MARGIN,
            sample_budget: DEFAULT_SAMPLE_BUDGET,
            warp_weight: WarpWeight::Harmonic,
        }
    }
}

fn check_labels(labels: &LabelSet, vocab_size: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels { index: 0 });
    }
    if labels.len() >= vocab_size {
        return Err(Error::NoNegatives);
    }
    if let Some(l) = labels.iter().find(|&l| l >= vocab_size) {
        return Err(Error::LabelOutOfRange {
            label: l + 1,
            vocab_size,
        });
    }
    Ok(())
}

/// Draws at most `budget` distinct `(positive, negative)` pairs.
///
/// When the full product fits in the budget it is returned in ascending
/// order; otherwise `budget` pairs are drawn uniformly without replacement
/// over the implicit product index.
pub fn sample_pairs(labels: &LabelSet, vocab_size: usize, budget: usize, rng: &mut Rng) -> Result<PairSample> {
    check_labels(labels, vocab_size)?;
    if budget == 0 {
        return Err(Error::InvalidArgument("sample budget must be at least 1".into()));
    }
    let pos = labels.as_slice();
    let neg = labels.complement(vocab_size);
    let total = pos.len() * neg.len();
    if total <= budget {
        return Ok(PairSample::full(labels, vocab_size));
    }
    let pairs = index::sample(rng, total, budget)
        .into_iter()
        .map(|i| (pos[i / neg.len()], neg[i % neg.len()]))
        .collect();
    Ok(PairSample { pairs })
}

/// `log(1 + Σ exp(f_v − f_u))` over the given pairs.
///
/// Evaluated as a log-sum-exp over `{0} ∪ {f_v − f_u}` shifted by its
/// maximum. The gradient is `Σ e^{f_v − f_u} / (1 + S) · (e_v − e_u)`, where
/// `1 / (1 + S) = exp(−loss)`.
pub fn lsep(scores: &[f64], pairs: &PairSample) -> LossResult {
    let k = scores.len();
    if pairs.is_empty() {
        return LossResult::zero(k);
    }
    let diffs: Vec<f64> = pairs.pairs.iter().map(|&(u, v)| scores[v] - scores[u]).collect();
    let m = diffs.iter().copied().fold(0.0_f64, f64::max);
    let sum: f64 = (-m).exp() + diffs.iter().map(|d| (d - m).exp()).sum::<f64>();
    let value = m + sum.ln();
    let mut grad = vec![0.0; k];
    for (&(u, v), d) in pairs.pairs.iter().zip(&diffs) {
        let w = (d - value).exp();
        grad[v] += w;
        grad[u] -= w;
    }
    LossResult {
        value: value.max(0.0),
        grad,
        clamped: false,
    }
}

/// `Σ max(0, α + f_v − f_u)`. The subgradient at the kink is 0.
pub fn hinge_rank(scores: &[f64], pairs: &PairSample, margin: f64) -> LossResult {
    let mut out = LossResult::zero(scores.len());
    for &(u, v) in &pairs.pairs {
        let slack = margin + scores[v] - scores[u];
        if slack > 0.0 {
            out.value += slack;
            out.grad[v] += 1.0;
            out.grad[u] -= 1.0;
        }
    }
    out
}

/// 1-based rank of `label` among all scores; ties go to the lower index.
pub fn rank_of(scores: &[f64], label: usize) -> usize {
    let s = scores[label];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &x)| x > s || (x == s && j < label))
        .count()
}

/// Rank-weighted hinge over the full product. Ranks are exact and treated as
/// constants when differentiating.
pub fn warp(scores: &[f64], labels: &LabelSet, margin: f64, weight: WarpWeight) -> Result<LossResult> {
    let k = scores.len();
    check_labels(labels, k)?;
    let neg = labels.complement(k);
    let mut out = LossResult::zero(k);
    for u in labels.iter() {
        let w = weight.weight(rank_of(scores, u));
        for &v in &neg {
            let slack = margin + scores[v] - scores[u];
            if slack > 0.0 {
                out.value += w * slack;
                out.grad[v] += w;
                out.grad[u] -= w;
            }
        }
    }
    Ok(out)
}

/// `Σ exp(f_v − f_u)` over the full product, exponents clamped at
/// [`BPMLL_EXP_CAP`]. A clamped term is constant, so its gradient is zero.
pub fn bpmll(scores: &[f64], labels: &LabelSet) -> Result<LossResult> {
    let k = scores.len();
    check_labels(labels, k)?;
    let neg = labels.complement(k);
    let mut out = LossResult::zero(k);
    for u in labels.iter() {
        for &v in &neg {
            let e = scores[v] - scores[u];
            if e > BPMLL_EXP_CAP || e.is_nan() {
                out.clamped = true;
                out.value += BPMLL_EXP_CAP.exp();
                continue;
            }
            let t = e.exp();
            out.value += t;
            out.grad[v] += t;
            out.grad[u] -= t;
        }
    }
    Ok(out)
}

/// Negative multi-label softmax log-likelihood, `−Σ_{y∈Y} log softmax(f)_y`.
pub fn softmax_ml(scores: &[f64], labels: &LabelSet) -> Result<LossResult> {
    let k = scores.len();
    if labels.is_empty() {
        return Err(Error::EmptyLabels { index: 0 });
    }
    if let Some(l) = labels.iter().find(|&l| l >= k) {
        return Err(Error::LabelOutOfRange {
            label: l + 1,
            vocab_size: k,
        });
    }
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    let n_pos = labels.len() as f64;
    let value = n_pos * lse - labels.iter().map(|y| scores[y]).sum::<f64>();
    let mut grad: Vec<f64> = scores.iter().map(|s| n_pos * (s - lse).exp()).collect();
    for y in labels.iter() {
        grad[y] -= 1.0;
    }
    Ok(LossResult {
        value,
        grad,
        clamped: false,
    })
}

/// Large-gap limits of the two smooth pairwise losses, for analysis only:
/// `(Σ max(0, α_i + f_v − f_u), Σ (f_v − f_u))` over the full product.
pub fn asymptotic_forms(scores: &[f64], labels: &LabelSet, sample_margin: f64) -> (f64, f64) {
    let k = scores.len();
    let neg = labels.complement(k);
    let mut hinge = 0.0;
    let mut linear = 0.0;
    for u in labels.iter() {
        for &v in &neg {
            let d = scores[v] - scores[u];
            hinge += (sample_margin + d).max(0.0);
            linear += d;
        }
    }
    (hinge, linear)
}

/// Evaluates `kind` on one sample. The lsep and hinge losses draw pairs under
/// the sample budget; warp and bpmll iterate the full product.
pub fn evaluate(
    kind: LossKind,
    scores: &[f64],
    labels: &LabelSet,
    cfg: &LossConfig,
    rng: &mut Rng,
) -> Result<LossResult> {
    let k = scores.len();
    match kind {
        LossKind::Lsep => Ok(lsep(scores, &sample_pairs(labels, k, cfg.sample_budget, rng)?)),
        LossKind::Hinge => Ok(hinge_rank(
            scores,
            &sample_pairs(labels, k, cfg.sample_budget, rng)?,
            cfg.margin,
        )),
        LossKind::Warp => warp(scores, labels, cfg.margin, cfg.warp_weight),
        LossKind::Bpmll => bpmll(scores, labels),
        LossKind::Softmax => softmax_ml(scores, labels),
    }
}
