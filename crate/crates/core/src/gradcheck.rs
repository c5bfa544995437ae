//! Central finite-difference checks of every analytic gradient in the crate.
//!
//! Relative error of an analytic gradient `a` against a numeric one `n` is
//! `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞, 1e-6)`. Instances that sit within `1e-3` of
//! a hinge kink, a rank tie or a ReLU boundary are redrawn, since the
//! derivative is undefined there.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::data::LabelSet;
use crate::decision::{count_loss, threshold_loss, DecisionHead, DecisionModel};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, LossKind, WarpWeight};
use crate::nn::Mlp;
use crate::predictor::{Architecture, PredictorModel};
use crate::rng::{rng_from_seed, Rng};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Failure threshold on the relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;

const KINK_GAP: f64 = 1e-3;

pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0, |m: f64, (a, n)| m.max((a - n).abs()));
    diff / inf(analytic).max(inf(numeric)).max(1e-6)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckRow {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl GradcheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRADCHECK_TOL
    }
}

fn gaussian(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_labels(k: usize, rng: &mut Rng) -> LabelSet {
    let n = rng.random_range(1..k);
    let idx = rand::seq::index::sample(rng, k, n).into_vec();
    LabelSet::new(idx, k).expect("in range")
}

/// True when `scores` are far enough from every nondifferentiable point of
/// the hinge and rank-weighted losses.
fn smooth_point(scores: &[f64], labels: &LabelSet, margin: f64) -> bool {
    let k = scores.len();
    for i in 0..k {
        for j in 0..k {
            if i != j && (scores[i] - scores[j]).abs() < KINK_GAP {
                return false;
            }
        }
    }
    for u in labels.iter() {
        for v in labels.complement(k) {
            if (margin + scores[v] - scores[u]).abs() < KINK_GAP {
                return false;
            }
        }
    }
    true
}

fn net_is_smooth(net: &Mlp, x: &[f64]) -> bool {
    // Pre-activations of every hidden layer must be away from zero.
    let mut a = x.to_vec();
    for layer in &net.layers[..net.layers.len() - 1] {
        let z = layer.apply(&a);
        if z.iter().any(|v| v.abs() < KINK_GAP) {
            return false;
        }
        a = z.into_iter().map(|v| v.max(0.0)).collect();
    }
    true
}

fn score_loss(kind: LossKind, scores: &[f64], labels: &LabelSet, cfg: &LossConfig) -> f64 {
    // Budget exceeds every product size used here, so pairs are the full
    // product and no randomness is consumed.
    let mut rng = rng_from_seed(0);
    losses::evaluate(kind, scores, labels, cfg, &mut rng)
        .expect("valid instance")
        .value
}

fn check_cfg() -> LossConfig {
    LossConfig {
        margin: 1.0,
        sample_budget: 10_000,
        warp_weight: WarpWeight::Harmonic,
    }
}

/// Gradient of each loss with respect to the score vector, `trials` random
/// instances with `K ∈ [3, 20]`.
pub fn check_score_losses(seed: u64, trials: usize) -> Vec<GradcheckRow> {
    let cfg = check_cfg();
    LossKind::ALL
        .iter()
        .enumerate()
        .map(|(n, &kind)| {
            let mut rng = rng_from_seed(seed.wrapping_add(n as u64));
            let mut worst: f64 = 0.0;
            let mut done = 0;
            while done < trials {
                let k = rng.random_range(3..=20);
                let scale = rng.random_range(0.5..3.0);
                let scores: Vec<f64> = (0..k).map(|_| scale * gaussian(&mut rng)).collect();
                let labels = random_labels(k, &mut rng);
                if matches!(kind, LossKind::Hinge | LossKind::Warp) && !smooth_point(&scores, &labels, cfg.margin) {
                    continue;
                }
                let analytic = losses::evaluate(kind, &scores, &labels, &cfg, &mut rng_from_seed(0))
                    .expect("valid instance")
                    .grad;
                let numeric = numeric_gradient(|f| score_loss(kind, f, &labels, &cfg), &scores, FD_STEP);
                worst = worst.max(relative_error(&analytic, &numeric));
                done += 1;
            }
            GradcheckRow {
                name: kind.name().into(),
                instances: trials,
                max_rel_error: worst,
            }
        })
        .collect()
}

/// Count-head and threshold-head losses with respect to their direct inputs
/// (logits and thresholds).
pub fn check_decision_losses(seed: u64, trials: usize) -> Vec<GradcheckRow> {
    let mut rng = rng_from_seed(seed ^ 0xC0);
    let mut count_worst: f64 = 0.0;
    let mut thresh_worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.random_range(2..=10);
        let logits: Vec<f64> = (0..n).map(|_| 2.0 * gaussian(&mut rng)).collect();
        let target = rng.random_range(1..=n);
        let (_, g) = count_loss(&logits, target);
        let num = numeric_gradient(|z| count_loss(z, target).0, &logits, FD_STEP);
        count_worst = count_worst.max(relative_error(&g, &num));

        let k = rng.random_range(3..=20);
        let scores: Vec<f64> = (0..k).map(|_| 2.0 * gaussian(&mut rng)).collect();
        let theta: Vec<f64> = (0..k).map(|_| gaussian(&mut rng)).collect();
        let labels = random_labels(k, &mut rng);
        let (_, g) = threshold_loss(&scores, &theta, &labels);
        let num = numeric_gradient(|t| threshold_loss(&scores, t, &labels).0, &theta, FD_STEP);
        thresh_worst = thresh_worst.max(relative_error(&g, &num));
    }
    vec![
        GradcheckRow {
            name: "count".into(),
            instances: trials,
            max_rel_error: count_worst,
        },
        GradcheckRow {
            name: "threshold".into(),
            instances: trials,
            max_rel_error: thresh_worst,
        },
    ]
}

/// Loss composed with the predictor, with respect to every parameter, for
/// both architectures and every loss kind (`d, K ≤ 10`).
pub fn check_predictor(seed: u64, trials: usize) -> Vec<GradcheckRow> {
    let cfg = check_cfg();
    let mut rows = Vec::new();
    for (a, arch) in [Architecture::Linear, Architecture::Mlp { hidden: 6 }].into_iter().enumerate() {
        for (n, &kind) in LossKind::ALL.iter().enumerate() {
            let mut rng = rng_from_seed(seed.wrapping_add(100 + 10 * a as u64 + n as u64));
            let mut worst: f64 = 0.0;
            let mut done = 0;
            while done < trials {
                let d = rng.random_range(2..=10);
                let k = rng.random_range(3..=10);
                let model = PredictorModel::init(arch, d, k, &mut rng);
                // Nonzero biases so ReLU boundaries are not aligned with the origin.
                let mut model = model;
                for t in model.net.tensors_mut() {
                    for v in t.iter_mut() {
                        *v += 0.3 * gaussian(&mut rng);
                    }
                }
                let x: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
                let labels = random_labels(k, &mut rng);
                let (scores, _) = model.forward(&x).expect("dims");
                if !net_is_smooth(&model.net, &x)
                    || (matches!(kind, LossKind::Hinge | LossKind::Warp)
                        && !smooth_point(&scores, &labels, cfg.margin))
                {
                    continue;
                }
                let (_, analytic) = model
                    .loss_gradient(&x, &labels, kind, &cfg, &mut rng_from_seed(0))
                    .expect("valid instance");
                let numeric = numeric_gradient(
                    |p| {
                        let mut m = model.clone();
                        m.net.set_flat_params(p);
                        let (s, _) = m.forward(&x).expect("dims");
                        score_loss(kind, &s, &labels, &cfg)
                    },
                    &model.net.flat_params(),
                    FD_STEP,
                );
                worst = worst.max(relative_error(&analytic, &numeric));
                done += 1;
            }
            let arch_name = match arch {
                Architecture::Linear => "linear",
                Architecture::Mlp { .. } => "mlp",
            };
            rows.push(GradcheckRow {
                name: format!("predictor/{arch_name}/{kind}"),
                instances: trials,
                max_rel_error: worst,
            });
        }
    }
    rows
}

/// Count and threshold losses composed with the decision MLP, with respect
/// to the MLP's parameters.
pub fn check_decision_heads(seed: u64, trials: usize) -> Vec<GradcheckRow> {
    let mut rows = Vec::new();
    for (h, head_kind) in ["count", "threshold"].into_iter().enumerate() {
        let mut rng = rng_from_seed(seed.wrapping_add(200 + h as u64));
        let mut worst: f64 = 0.0;
        let mut done = 0;
        while done < trials {
            let d = rng.random_range(2..=10);
            let k = rng.random_range(3..=10);
            let n = rng.random_range(2..=4);
            let head = if h == 0 {
                DecisionHead::Count { max_labels: n }
            } else {
                DecisionHead::Threshold
            };
            let mut model = DecisionModel::init(head, d, k, [8, 5], rng.random());
            for t in model.net.tensors_mut() {
                for v in t.iter_mut() {
                    *v += 0.3 * gaussian(&mut rng);
                }
            }
            let x: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
            if !net_is_smooth(&model.net, &x) {
                continue;
            }
            let labels = random_labels(k, &mut rng);
            let scores: Vec<f64> = (0..k).map(|_| 2.0 * gaussian(&mut rng)).collect();
            let target = labels.len().clamp(1, n);
            let objective = |out: &[f64]| -> (f64, Vec<f64>) {
                if h == 0 {
                    count_loss(out, target)
                } else {
                    threshold_loss(&scores, out, &labels)
                }
            };
            let trace = model.net.forward(&x).expect("dims");
            let (_, g_out) = objective(trace.output());
            let mut grads = model.net.zeros_like();
            model.net.backward(&trace, &g_out, 1.0, &mut grads);
            let numeric = numeric_gradient(
                |p| {
                    let mut m = model.net.clone();
                    m.set_flat_params(p);
                    objective(m.forward(&x).expect("dims").output()).0
                },
                &model.net.flat_params(),
                FD_STEP,
            );
            worst = worst.max(relative_error(&grads.flat_params(), &numeric));
            done += 1;
        }
        rows.push(GradcheckRow {
            name: format!("decision/{head_kind}"),
            instances: trials,
            max_rel_error: worst,
        });
    }
    rows
}

/// Every suite. `trials` instances for the score-level suites and
/// `max(trials / 5, 20)` for the parameter-level ones.
pub fn run_all(seed: u64, trials: usize) -> Result<Vec<GradcheckRow>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let param_trials = (trials / 5).max(20);
    let mut rows = check_score_losses(seed, trials);
    rows.extend(check_decision_losses(seed, trials));
    rows.extend(check_predictor(seed, param_trials));
    rows.extend(check_decision_heads(seed, param_trials));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], FD_STEP);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_scale() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(run_all(1, 0).is_err());
    }
}
