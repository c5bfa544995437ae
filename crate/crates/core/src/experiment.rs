//! End-to-end experiment pipeline: train the predictor, train decision heads
//! on its frozen features, pick baseline rules on a validation split, and
//! score every rule on a test split.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelSet};
use crate::decision::{
    self, cross_validate_rule, decide, BaselineKind, DecisionConfig, DecisionModel, DecisionRule,
    HeadTrainingLog,
};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalPair, MetricsReport, PrPoint};
use crate::predictor::{self, predict_penultimate, predict_scores, PredictorModel, TrainConfig, TrainingLog};

/// Decision rules as named in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSpec {
    /// Top-k with `k` chosen on the validation split.
    TopKCv,
    /// Global threshold chosen on the validation split.
    ThresholdCv,
    LearnedCount,
    LearnedThreshold,
    TopK { k: usize },
    GlobalThreshold { theta: f64 },
}

impl RuleSpec {
    pub const TABLE2: [RuleSpec; 4] = [
        RuleSpec::TopKCv,
        RuleSpec::ThresholdCv,
        RuleSpec::LearnedCount,
        RuleSpec::LearnedThreshold,
    ];

    pub fn label(&self) -> String {
        match self {
            RuleSpec::TopKCv => "top_k_cv".into(),
            RuleSpec::ThresholdCv => "threshold_cv".into(),
            RuleSpec::LearnedCount => "learned_count".into(),
            RuleSpec::LearnedThreshold => "learned_threshold".into(),
            RuleSpec::TopK { k } => format!("top_k_{k}"),
            RuleSpec::GlobalThreshold { theta } => format!("threshold_{theta}"),
        }
    }
}

/// Trained heads, present when a rule needs them.
#[derive(Debug, Clone, Default)]
pub struct Heads {
    pub count: Option<(DecisionModel, HeadTrainingLog)>,
    pub threshold: Option<(DecisionModel, HeadTrainingLog)>,
}

pub fn train_heads(train: &Dataset, predictor: &PredictorModel, cfg: &DecisionConfig, rules: &[RuleSpec]) -> Result<Heads> {
    let mut heads = Heads::default();
    if rules.contains(&RuleSpec::LearnedCount) {
        heads.count = Some(decision::train_count_head(train, predictor, cfg)?);
    }
    if rules.contains(&RuleSpec::LearnedThreshold) {
        heads.threshold = Some(decision::train_threshold_head(train, predictor, cfg)?);
    }
    Ok(heads)
}

/// Resolves rule specs to concrete rules, using `val` for the grid searches.
pub fn resolve_rules(
    rules: &[RuleSpec],
    predictor: &PredictorModel,
    heads: &Heads,
    val: Option<&Dataset>,
) -> Result<Vec<(RuleSpec, DecisionRule)>> {
    let mut val_scores = None;
    let mut out = Vec::with_capacity(rules.len());
    for &spec in rules {
        let rule = match spec {
            RuleSpec::TopKCv | RuleSpec::ThresholdCv => {
                let val = val.ok_or_else(|| {
                    Error::InvalidArgument(format!("rule {} needs a validation split", spec.label()))
                })?;
                if val_scores.is_none() {
                    val_scores = Some(predict_scores(predictor, val)?);
                }
                let kind = if spec == RuleSpec::TopKCv {
                    BaselineKind::TopK
                } else {
                    BaselineKind::GlobalThreshold
                };
                cross_validate_rule(kind, val_scores.as_ref().expect("computed"), &val.labels())?
            }
            RuleSpec::LearnedCount => DecisionRule::LearnedCount(
                heads
                    .count
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("count head not trained".into()))?
                    .0
                    .clone(),
            ),
            RuleSpec::LearnedThreshold => DecisionRule::LearnedThreshold(
                heads
                    .threshold
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("threshold head not trained".into()))?
                    .0
                    .clone(),
            ),
            RuleSpec::TopK { k } => DecisionRule::TopK(k),
            RuleSpec::GlobalThreshold { theta } => DecisionRule::GlobalThreshold(theta),
        };
        out.push((spec, rule));
    }
    Ok(out)
}

pub fn predict_labels(predictor: &PredictorModel, rule: &DecisionRule, ds: &Dataset) -> Result<Vec<LabelSet>> {
    let scores = predict_scores(predictor, ds)?;
    let pen = predict_penultimate(predictor, ds)?;
    scores
        .iter()
        .zip(&pen)
        .map(|(s, h)| decide(rule, s, h))
        .collect()
}

pub fn evaluate_rule(predictor: &PredictorModel, rule: &DecisionRule, ds: &Dataset) -> Result<MetricsReport> {
    let pairs: Vec<EvalPair> = predict_labels(predictor, rule, ds)?
        .into_iter()
        .zip(&ds.samples)
        .map(|(predicted, s)| EvalPair {
            predicted,
            truth: s.labels.clone(),
        })
        .collect();
    metrics::evaluate(&pairs, ds.vocab_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleResult {
    pub rule: String,
    pub resolved: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub predictor: PredictorModel,
    pub training_log: TrainingLog,
    pub heads: Heads,
    pub results: Vec<RuleResult>,
    pub pr_curve: Vec<PrPoint>,
}

impl Outcome {
    pub fn result(&self, spec: RuleSpec) -> Option<&MetricsReport> {
        let label = spec.label();
        self.results.iter().find(|r| r.rule == label).map(|r| &r.metrics)
    }
}

/// Splits used by one experiment.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Dataset,
}

pub fn run(splits: &Splits, train_cfg: &TrainConfig, dec_cfg: &DecisionConfig, rules: &[RuleSpec], pr_points: usize) -> Result<Outcome> {
    let (predictor, training_log) = predictor::train(&splits.train, train_cfg)?;
    let heads = train_heads(&splits.train, &predictor, dec_cfg, rules)?;
    let results = score_rules(&predictor, &heads, splits, rules)?;
    let test_scores = predict_scores(&predictor, &splits.test)?;
    let pr_curve = metrics::pr_curve(&test_scores, &splits.test.labels(), pr_points.max(1))?;
    Ok(Outcome {
        predictor,
        training_log,
        heads,
        results,
        pr_curve,
    })
}

pub fn score_rules(predictor: &PredictorModel, heads: &Heads, splits: &Splits, rules: &[RuleSpec]) -> Result<Vec<RuleResult>> {
    resolve_rules(rules, predictor, heads, splits.val.as_ref())?
        .into_iter()
        .map(|(spec, rule)| {
            Ok(RuleResult {
                rule: spec.label(),
                resolved: rule.name(),
                metrics: evaluate_rule(predictor, &rule, &splits.test)?,
            })
        })
        .collect()
}

/// Table-1 layout: `PC-P PC-R OV-P OV-R F1 0-1`, plus Hamming.
pub fn format_table(rows: &[(String, &MetricsReport)]) -> String {
    use std::fmt::Write;
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(4).max(4);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8}",
        "rule", "PC-P", "PC-R", "OV-P", "OV-R", "F1", "0-1", "Hamming"
    );
    for (name, m) in rows {
        let _ = writeln!(
            s,
            "{:<width$} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>8.4}",
            name,
            100.0 * m.pc_precision,
            100.0 * m.pc_recall,
            100.0 * m.ov_precision,
            100.0 * m.ov_recall,
            100.0 * m.macro_f1,
            100.0 * m.exact_match,
            m.hamming
        );
    }
    s
}

/// Marginals of the decision benchmark: label frequencies spread from common
/// to rare, so the best per-class thresholds differ and label counts vary.
pub const BENCHMARK_MARGINALS: [f64; 8] = [0.7, 0.55, 0.45, 0.35, 0.25, 0.2, 0.15, 0.1];
pub const BENCHMARK_TEST_SIZE: usize = 500;

/// Seeded synthetic benchmark used to compare decision rules and losses:
/// independent labels with [`BENCHMARK_MARGINALS`], one noisy cluster per
/// label subset (d = 16, sigma = 0.5), 3000 draws of which samples with an
/// empty or full label set are dropped. The last 500 form the test split;
/// `label_noise` corrupts only the training part, and 5% of it is held out
/// for validation.
pub fn decision_benchmark(seed: u64, label_noise: f64) -> Result<Splits> {
    let dist = crate::data::LabelDistribution::independent(BENCHMARK_MARGINALS.to_vec())?;
    let ds = crate::data::generate_synthetic(&crate::data::SyntheticSpec {
        dist,
        n_samples: 3000,
        feature_dim: 16,
        feature_mode: crate::data::FeatureMode::ClusterPerSubset,
        noise_sigma: 0.5,
        seed,
    })?
    .trainable();
    let n = ds.len();
    let cut = n - BENCHMARK_TEST_SIZE;
    let test = Dataset::new(ds.samples[cut..].to_vec(), ds.vocab_size, ds.feature_dim)?;
    let rest = Dataset::new(ds.samples[..cut].to_vec(), ds.vocab_size, ds.feature_dim)?;
    let rest = if label_noise > 0.0 {
        crate::data::corrupt_labels(&rest, label_noise, seed)?
    } else {
        rest
    };
    let (train, val) = crate::data::split(&rest, 0.05, seed)?;
    Ok(Splits {
        train,
        val: Some(val),
        test,
    })
}

/// Training settings for [`decision_benchmark`].
pub fn benchmark_train_config(loss: crate::losses::LossKind, seed: u64) -> TrainConfig {
    TrainConfig {
        loss,
        epochs: 50,
        seed,
        ..TrainConfig::default()
    }
}
