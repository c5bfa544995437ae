//! Exact conditional risk of the pairwise exponential surrogate over a small
//! label space, its minimizer, and checks of the minimizer against the Bayes
//! ranking rule.
//!
//! For a conditional label distribution with pair probabilities
//! `β[u][v] = P(u ∈ Y, v ∉ Y)` the risk is
//!
//! ```text
//! R(f) = Σ_{u≠v} β[u][v] · exp(−(f_u − f_v) / 2)
//! ```
//!
//! which is convex and invariant under `f → f + c·1`. Minimizers are
//! reported in the gauge `Σ f_u = 0`.

use serde::Serialize;

use crate::data::LabelDistribution;
use crate::error::{Error, Result};

/// Gradient tolerance used by [`verify_theorem1`].
pub const CONVERGENCE_TOL: f64 = 1e-8;

/// Iteration cap used by [`verify_theorem1`].
pub const MAX_ITERS: usize = 1_000_000;

pub fn marginals(dist: &LabelDistribution) -> Vec<f64> {
    dist.marginals()
}

/// `K × K` matrix of `P(u ∈ Y, v ∉ Y)`; the diagonal is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairProbs {
    pub vocab_size: usize,
    /// Row-major.
    pub beta: Vec<f64>,
}

impl PairProbs {
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.beta[u * self.vocab_size + v]
    }
}

pub fn pair_probs(dist: &LabelDistribution) -> PairProbs {
    let k = dist.vocab_size();
    let mut beta = vec![0.0; k * k];
    match dist {
        LabelDistribution::Independent { probs } => {
            for u in 0..k {
                for v in 0..k {
                    if u != v {
                        beta[u * k + v] = probs[u] * (1.0 - probs[v]);
                    }
                }
            }
        }
        LabelDistribution::Joint { table, .. } => {
            for (mask, &p) in table.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for u in (0..k).filter(|u| mask >> u & 1 == 1) {
                    for v in (0..k).filter(|v| mask >> v & 1 == 0) {
                        beta[u * k + v] += p;
                    }
                }
            }
        }
    }
    PairProbs { vocab_size: k, beta }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskEval {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major `K × K`.
    pub hessian: Vec<f64>,
}

/// Risk value, gradient and Hessian at `f`.
pub fn risk(f: &[f64], beta: &PairProbs) -> Result<RiskEval> {
    let k = beta.vocab_size;
    if f.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: f.len(),
        });
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; k];
    let mut hessian = vec![0.0; k * k];
    for u in 0..k {
        for v in 0..k {
            let b = beta.get(u, v);
            if u == v || b == 0.0 {
                continue;
            }
            let term = b * (-(f[u] - f[v]) / 2.0).exp();
            value += term;
            grad[u] -= term / 2.0;
            grad[v] += term / 2.0;
            let h = term / 4.0;
            hessian[u * k + u] += h;
            hessian[v * k + v] += h;
            hessian[u * k + v] -= h;
            hessian[v * k + u] -= h;
        }
    }
    Ok(RiskEval { value, grad, hessian })
}

fn risk_value(f: &[f64], beta: &PairProbs) -> f64 {
    let k = beta.vocab_size;
    let mut value = 0.0;
    for u in 0..k {
        for v in 0..k {
            let b = beta.get(u, v);
            if u != v && b != 0.0 {
                value += b * (-(f[u] - f[v]) / 2.0).exp();
            }
        }
    }
    value
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskMinimizer {
    pub f_star: Vec<f64>,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
    pub risk: f64,
}

fn center(f: &mut [f64]) {
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    f.iter_mut().for_each(|x| *x -= mean);
}

/// Gradient descent with Armijo backtracking, started at `f = 0` and kept on
/// the hyperplane `Σ f_u = 0`. Converged once the projected gradient has
/// ∞-norm at most `tol`.
pub fn minimize_risk(beta: &PairProbs, tol: f64, max_iters: usize) -> RiskMinimizer {
    let k = beta.vocab_size;
    let mut f = vec![0.0; k];
    let mut step = 1.0;
    let mut grad_norm = f64::INFINITY;
    let mut value = risk_value(&f, beta);
    for it in 0..max_iters {
        let mut g = risk(&f, beta).expect("dimensions match").grad;
        center(&mut g);
        grad_norm = g.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
        if grad_norm <= tol {
            return RiskMinimizer {
                f_star: f,
                converged: true,
                grad_norm,
                iterations: it,
                risk: value,
            };
        }
        let g2: f64 = g.iter().map(|x| x * x).sum();
        step *= 2.0;
        let mut trial: Vec<f64>;
        loop {
            trial = f.iter().zip(&g).map(|(x, gi)| x - step * gi).collect();
            let tv = risk_value(&trial, beta);
            if tv <= value - 0.5 * step * g2 {
                value = tv;
                break;
            }
            // Near the optimum the sufficient decrease falls below the
            // resolution of the risk value; fall back to requiring a smaller
            // projected gradient.
            if (tv - value).abs() <= 8.0 * f64::EPSILON * value.abs() {
                let mut gt = risk(&trial, beta).expect("dimensions match").grad;
                center(&mut gt);
                if gt.iter().fold(0.0, |m: f64, x| m.max(x.abs())) < grad_norm {
                    value = tv;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-300 {
                return RiskMinimizer {
                    f_star: f,
                    converged: false,
                    grad_norm,
                    iterations: it,
                    risk: value,
                };
            }
        }
        center(&mut trial);
        f = trial;
    }
    RiskMinimizer {
        f_star: f,
        converged: false,
        grad_norm,
        iterations: max_iters,
        risk: value,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCheck {
    /// 1-based labels.
    pub u: usize,
    pub v: usize,
    pub score_gap: f64,
    /// `log(β[u][v] / β[v][u])`, absent when either probability is zero.
    pub log_odds: Option<f64>,
    pub residual: Option<f64>,
    pub marginal_gap: f64,
    pub order_agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    pub vocab_size: usize,
    pub tol: f64,
    pub marginals: Vec<f64>,
    pub minimizer: RiskMinimizer,
    pub pairs: Vec<PairCheck>,
    /// Ordered pairs (1-based) left out of the residual check.
    pub excluded: Vec<(usize, usize)>,
    pub max_residual: f64,
    pub order_agreement: f64,
    /// Independent marginals only: `max_u |f*_u − log p_u − c|` with `c` the
    /// mean offset.
    pub log_marginal_residual: Option<f64>,
    /// Independent marginals only: same, against `log(p_u / (1 − p_u))`.
    pub log_odds_residual: Option<f64>,
    pub pass: bool,
}

/// Residual of `f` against `target` after removing the best constant offset
/// in the mean sense.
pub fn offset_residual(f: &[f64], target: &[f64]) -> f64 {
    let c = f.iter().zip(target).map(|(a, b)| a - b).sum::<f64>() / f.len() as f64;
    f.iter()
        .zip(target)
        .map(|(a, b)| (a - b - c).abs())
        .fold(0.0, f64::max)
}

/// Minimizes the exact risk for `dist` and checks, for every ordered pair,
/// the log-odds identity `f*_u − f*_v = log(β[u][v] / β[v][u])` and that the
/// score order matches the marginal order.
pub fn verify_theorem1(dist: &LabelDistribution, tol: f64) -> Result<TheoremReport> {
    if let LabelDistribution::Joint { vocab_size, .. } = dist {
        if *vocab_size > crate::data::MAX_JOINT_LABELS {
            return Err(Error::EnumerationCap {
                vocab_size: *vocab_size,
                cap: crate::data::MAX_JOINT_LABELS,
            });
        }
    }
    let k = dist.vocab_size();
    let m = marginals(dist);
    let beta = pair_probs(dist);
    let minimizer = minimize_risk(&beta, CONVERGENCE_TOL, MAX_ITERS);
    let f = &minimizer.f_star;

    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    for u in 0..k {
        for v in 0..k {
            if u == v {
                continue;
            }
            let (buv, bvu) = (beta.get(u, v), beta.get(v, u));
            let score_gap = f[u] - f[v];
            let log_odds = (buv > 0.0 && bvu > 0.0).then(|| (buv / bvu).ln());
            if log_odds.is_none() {
                excluded.push((u + 1, v + 1));
            }
            let marginal_gap = m[u] - m[v];
            let order_agrees = if marginal_gap.abs() <= 1e-12 {
                score_gap.abs() <= tol
            } else {
                score_gap.signum() == marginal_gap.signum()
                    || (score_gap.abs() <= tol && marginal_gap.abs() <= tol)
            };
            pairs.push(PairCheck {
                u: u + 1,
                v: v + 1,
                score_gap,
                log_odds,
                residual: log_odds.map(|lo| (score_gap - lo).abs()),
                marginal_gap,
                order_agrees,
            });
        }
    }
    let max_residual = pairs.iter().filter_map(|p| p.residual).fold(0.0, f64::max);
    let order_agreement = if pairs.is_empty() {
        1.0
    } else {
        pairs.iter().filter(|p| p.order_agrees).count() as f64 / pairs.len() as f64
    };
    let (log_marginal_residual, log_odds_residual) = match dist {
        LabelDistribution::Independent { probs } if probs.iter().all(|&p| p > 0.0 && p < 1.0) => {
            let logs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
            let logits: Vec<f64> = probs.iter().map(|p| (p / (1.0 - p)).ln()).collect();
            (Some(offset_residual(f, &logs)), Some(offset_residual(f, &logits)))
        }
        _ => (None, None),
    };
    let pass = minimizer.converged && max_residual <= tol && order_agreement == 1.0;
    Ok(TheoremReport {
        vocab_size: k,
        tol,
        marginals: m,
        minimizer,
        pairs,
        excluded,
        max_residual,
        order_agreement,
        log_marginal_residual,
        log_odds_residual,
        pass,
    })
}

impl TheoremReport {
    /// Per-pair table followed by a PASS/FAIL line.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "converged={} iterations={} grad_norm={:.3e}",
            self.minimizer.converged, self.minimizer.iterations, self.minimizer.grad_norm
        );
        let fs: Vec<String> = self.minimizer.f_star.iter().map(|x| format!("{x:.6}")).collect();
        let _ = writeln!(s, "f* = [{}]", fs.join(", "));
        let _ = writeln!(
            s,
            "{:>3} {:>3} {:>12} {:>12} {:>12} {:>12} {:>6}",
            "u", "v", "f_u-f_v", "log_odds", "residual", "P(u)-P(v)", "order"
        );
        for p in &self.pairs {
            let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(
                s,
                "{:>3} {:>3} {:>12.6} {:>12} {:>12} {:>12.6} {:>6}",
                p.u,
                p.v,
                p.score_gap,
                opt(p.log_odds),
                opt(p.residual),
                p.marginal_gap,
                if p.order_agrees { "ok" } else { "FLIP" }
            );
        }
        if !self.excluded.is_empty() {
            let ex: Vec<String> = self.excluded.iter().map(|(u, v)| format!("({u},{v})")).collect();
            let _ = writeln!(s, "excluded (zero pair probability): {}", ex.join(" "));
        }
        let _ = writeln!(
            s,
            "max_residual={:.3e} order_agreement={:.4}",
            self.max_residual, self.order_agreement
        );
        if let (Some(a), Some(b)) = (self.log_marginal_residual, self.log_odds_residual) {
            let _ = writeln!(s, "offset residual vs log p: {a:.3e}; vs log-odds: {b:.3e}");
        }
        let _ = writeln!(s, "{}", if self.pass { "PASS" } else { "FAIL" });
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelSet;

    fn indep(p: &[f64]) -> LabelDistribution {
        LabelDistribution::independent(p.to_vec()).unwrap()
    }

    #[test]
    fn marginal_examples() {
        assert_eq!(marginals(&indep(&[0.9, 0.5, 0.1])), vec![0.9, 0.5, 0.1]);
        let j = LabelDistribution::from_subsets(
            2,
            &[
                (LabelSet::new([0], 2).unwrap(), 0.6),
                (LabelSet::new([0, 1], 2).unwrap(), 0.4),
            ],
        )
        .unwrap();
        let m = marginals(&j);
        assert!((m[0] - 1.0).abs() < 1e-15 && (m[1] - 0.4).abs() < 1e-15);
        let uniform = LabelDistribution::joint(2, vec![0.25; 4]).unwrap();
        assert_eq!(marginals(&uniform), vec![0.5, 0.5]);
    }

    #[test]
    fn pair_prob_examples() {
        let b = pair_probs(&indep(&[0.9, 0.5]));
        assert!((b.get(0, 1) - 0.45).abs() < 1e-15);
        assert!((b.get(1, 0) - 0.05).abs() < 1e-15);

        let b = pair_probs(&indep(&[1.0, 0.3, 0.6]));
        assert_eq!(b.get(1, 0), 0.0);
        assert_eq!(b.get(2, 0), 0.0);

        let point = LabelDistribution::from_subsets(2, &[(LabelSet::new([0], 2).unwrap(), 1.0)]).unwrap();
        let b = pair_probs(&point);
        assert_eq!((b.get(0, 1), b.get(1, 0)), (1.0, 0.0));
    }

    #[test]
    fn joint_and_independent_pair_probs_agree() {
        let p = [0.7, 0.2, 0.55];
        let mut table = vec![0.0; 8];
        for (mask, t) in table.iter_mut().enumerate() {
            *t = (0..3).map(|k| if mask >> k & 1 == 1 { p[k] } else { 1.0 - p[k] }).product();
        }
        let sum: f64 = table.iter().sum();
        table.iter_mut().for_each(|t| *t /= sum);
        let a = pair_probs(&LabelDistribution::joint(3, table).unwrap());
        let b = pair_probs(&indep(&p));
        for (x, y) in a.beta.iter().zip(&b.beta) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn risk_at_zero_is_sum_of_beta() {
        let b = pair_probs(&indep(&[0.3, 0.8, 0.6]));
        let r = risk(&[0.0; 3], &b).unwrap();
        assert!((r.value - b.beta.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn two_label_symmetric_risk() {
        let b = PairProbs {
            vocab_size: 2,
            beta: vec![0.0, 0.3, 0.3, 0.0],
        };
        for s in [-2.0, -0.5, 0.0, 1.0, 3.0] {
            let r = risk(&[s, 0.0], &b).unwrap();
            let expected = 0.3 * ((-s / 2.0f64).exp() + (s / 2.0f64).exp());
            assert!((r.value - expected).abs() < 1e-14);
        }
        let m = minimize_risk(&b, 1e-10, 10_000);
        assert!(m.converged);
        assert!(m.f_star.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn log_nine_gap() {
        let b = pair_probs(&indep(&[0.9, 0.5]));
        let m = minimize_risk(&b, 1e-10, 100_000);
        assert!(m.converged);
        assert!((m.f_star[0] - m.f_star[1] - 9f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn marginal_ordering_for_three_labels() {
        let b = pair_probs(&indep(&[0.9, 0.5, 0.1]));
        let f = minimize_risk(&b, 1e-10, 100_000).f_star;
        assert!(f[0] > f[1] && f[1] > f[2]);
    }

    #[test]
    fn point_mass_label_runs_away() {
        // Label 1 is always present, so its score is pushed without bound.
        let b = pair_probs(&indep(&[1.0, 0.5]));
        let m = minimize_risk(&b, 1e-8, 2_000);
        assert!(m.f_star[0] - m.f_star[1] > 20.0);
    }

    #[test]
    fn verify_independent_pass_and_tie() {
        let r = verify_theorem1(&indep(&[0.9, 0.5, 0.1]), 1e-3).unwrap();
        assert!(r.pass, "{}", r.to_text());
        assert!(r.max_residual <= 1e-3);
        let r = verify_theorem1(&indep(&[0.4, 0.4, 0.7]), 1e-3).unwrap();
        assert!(r.pass);
        assert!((r.minimizer.f_star[0] - r.minimizer.f_star[1]).abs() <= 1e-3);
    }

    #[test]
    fn verify_lists_excluded_pairs() {
        let r = verify_theorem1(&indep(&[1.0, 0.5, 0.2]), 1e-3).unwrap();
        assert!(r.excluded.contains(&(2, 1)));
        assert!(r.pairs.iter().filter(|p| p.u == 2 && p.v == 1).all(|p| p.residual.is_none()));
    }
}
