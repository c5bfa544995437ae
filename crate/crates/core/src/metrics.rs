//! Multi-label evaluation measures and precision-recall sweeps.
//!
//! Zero-denominator convention: a class that is never predicted has
//! precision 1 if it also never occurs in the ground truth, else 0. A class
//! that never occurs in the ground truth has recall 1. Per-class F1 is 0 when
//! both precision and recall are 0. The pooled (overall) rates follow the
//! same rule on the summed counts.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::LabelSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub predicted: LabelSet,
    pub truth: LabelSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    /// Correct predictions of the class.
    pub correct: usize,
    /// Predictions of the class.
    pub predicted: usize,
    /// Ground-truth occurrences of the class.
    pub truth: usize,
}

impl ClassCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted, self.truth == 0)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.truth, true)
    }

    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }
}

fn ratio(num: usize, den: usize, empty_value: bool) -> f64 {
    if den == 0 {
        if empty_value {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pc_precision: f64,
    pub pc_recall: f64,
    /// F1 of the per-class averaged precision and recall.
    pub pc_f1: f64,
    pub ov_precision: f64,
    pub ov_recall: f64,
    pub ov_f1: f64,
    /// Mean of the per-class F1 scores.
    pub macro_f1: f64,
    pub exact_match: f64,
    pub hamming: f64,
    pub per_class_f1: Vec<f64>,
    pub per_class_counts: Vec<ClassCounts>,
    pub n_samples: usize,
}

pub fn evaluate(pairs: &[EvalPair], vocab_size: usize) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let mut counts = vec![ClassCounts::default(); vocab_size];
    let mut exact = 0usize;
    let mut sym_diff = 0usize;
    for p in pairs {
        for l in p.predicted.iter().chain(p.truth.iter()) {
            if l >= vocab_size {
                return Err(Error::LabelOutOfRange {
                    label: l + 1,
                    vocab_size,
                });
            }
        }
        for l in p.predicted.iter() {
            counts[l].predicted += 1;
            if p.truth.contains(l) {
                counts[l].correct += 1;
            }
        }
        for l in p.truth.iter() {
            counts[l].truth += 1;
        }
        let common = p.predicted.iter().filter(|&l| p.truth.contains(l)).count();
        let diff = p.predicted.len() + p.truth.len() - 2 * common;
        sym_diff += diff;
        if diff == 0 {
            exact += 1;
        }
    }
    let k = vocab_size as f64;
    let n = pairs.len() as f64;
    let pc_precision = counts.iter().map(ClassCounts::precision).sum::<f64>() / k;
    let pc_recall = counts.iter().map(ClassCounts::recall).sum::<f64>() / k;
    let per_class_f1: Vec<f64> = counts.iter().map(ClassCounts::f1).collect();
    let total = counts.iter().fold(ClassCounts::default(), |a, c| ClassCounts {
        correct: a.correct + c.correct,
        predicted: a.predicted + c.predicted,
        truth: a.truth + c.truth,
    });
    let ov_precision = total.precision();
    let ov_recall = total.recall();
    Ok(MetricsReport {
        pc_precision,
        pc_recall,
        pc_f1: harmonic(pc_precision, pc_recall),
        ov_precision,
        ov_recall,
        ov_f1: harmonic(ov_precision, ov_recall),
        macro_f1: per_class_f1.iter().sum::<f64>() / k,
        exact_match: exact as f64 / n,
        hamming: sym_diff as f64 / n,
        per_class_f1,
        per_class_counts: counts,
        n_samples: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Overall precision and recall of the global-threshold rule at
/// `n_points` equally spaced thresholds from the smallest to the largest
/// observed score.
pub fn pr_curve(scores: &[Vec<f64>], truths: &[LabelSet], n_points: usize) -> Result<Vec<PrPoint>> {
    if scores.is_empty() || scores.len() != truths.len() {
        return Err(Error::InvalidArgument("scores and truths must be nonempty and aligned".into()));
    }
    if n_points == 0 {
        return Err(Error::InvalidArgument("n_points must be at least 1".into()));
    }
    let grid = crate::decision::threshold_grid(scores, n_points);
    Ok(grid
        .into_iter()
        .map(|t| {
            let mut c = ClassCounts::default();
            for (s, y) in scores.iter().zip(truths) {
                for (k, &v) in s.iter().enumerate() {
                    let hit = y.contains(k);
                    if v > t {
                        c.predicted += 1;
                        c.correct += hit as usize;
                    }
                    c.truth += hit as usize;
                }
            }
            PrPoint {
                threshold: t,
                precision: c.precision(),
                recall: c.recall(),
            }
        })
        .collect())
}

pub fn write_pr_csv<W: Write>(points: &[PrPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "precision", "recall"]).map_err(csv_err)?;
    for p in points {
        w.write_record([
            format!("{:?}", p.threshold),
            format!("{:?}", p.precision),
            format!("{:?}", p.recall),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}
