//! Python bindings. Labels are 1-based on the Python side, as in data files.

use std::path::PathBuf;

use lsep::checkpoint::{self, Model};
use lsep::consistency;
use lsep::data::{self, FeatureMode, LabelDistribution, SyntheticSpec};
use lsep::decision::{self, DecisionConfig};
use lsep::experiment;
use lsep::losses::{self, LossConfig, LossKind};
use lsep::metrics::{self, EvalPair};
use lsep::predictor::{self, Architecture, TrainConfig};
use lsep::rng::rng_from_seed;
use lsep::{Dataset, DecisionModel, DecisionRule, LabelSet, LabeledSample, PredictorModel};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: lsep::Error) -> PyErr {
    match e {
        lsep::Error::NonFiniteLoss { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn label_set(labels: &[usize], k: usize) -> PyResult<LabelSet> {
    LabelSet::from_one_based(labels.iter().copied(), k).map_err(err)
}

fn dataset(features: Vec<Vec<f64>>, labels: Vec<Vec<usize>>, vocab_size: usize) -> PyResult<Dataset> {
    if features.len() != labels.len() {
        return Err(PyValueError::new_err("features and labels differ in length"));
    }
    let dim = features.first().map_or(0, Vec::len);
    let samples = features
        .into_iter()
        .zip(labels)
        .map(|(x, y)| {
            Ok(LabeledSample {
                features: x,
                labels: label_set(&y, vocab_size)?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    Dataset::new(samples, vocab_size, dim).map_err(err)
}

fn parse_loss(kind: &str) -> PyResult<LossKind> {
    kind.parse().map_err(err)
}

/// Loss value, gradient with respect to the scores, and the clamp flag.
#[pyfunction]
#[pyo3(signature = (kind, scores, labels, margin = losses::DEFAULT_MARGIN, sample_budget = losses::DEFAULT_SAMPLE_BUDGET, seed = 0))]
fn loss(
    kind: &str,
    scores: Vec<f64>,
    labels: Vec<usize>,
    margin: f64,
    sample_budget: usize,
    seed: u64,
) -> PyResult<(f64, Vec<f64>, bool)> {
    let y = label_set(&labels, scores.len())?;
    let cfg = LossConfig {
        margin,
        sample_budget,
        ..LossConfig::default()
    };
    let r = losses::evaluate(parse_loss(kind)?, &scores, &y, &cfg, &mut rng_from_seed(seed)).map_err(err)?;
    Ok((r.value, r.grad, r.clamped))
}

#[pyfunction]
#[pyo3(signature = (labels, vocab_size, budget, seed = 0))]
fn sample_pairs(labels: Vec<usize>, vocab_size: usize, budget: usize, seed: u64) -> PyResult<Vec<(usize, usize)>> {
    let y = label_set(&labels, vocab_size)?;
    let s = losses::sample_pairs(&y, vocab_size, budget, &mut rng_from_seed(seed)).map_err(err)?;
    Ok(s.pairs.into_iter().map(|(u, v)| (u + 1, v + 1)).collect())
}

/// Metric report for predicted and true label sets, as a dict.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    predicted: Vec<Vec<usize>>,
    truth: Vec<Vec<usize>>,
    vocab_size: usize,
) -> PyResult<Bound<'py, PyAny>> {
    if predicted.len() != truth.len() {
        return Err(PyValueError::new_err("predicted and truth differ in length"));
    }
    let pairs = predicted
        .iter()
        .zip(&truth)
        .map(|(p, t)| {
            Ok(EvalPair {
                predicted: label_set(p, vocab_size)?,
                truth: label_set(t, vocab_size)?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    json_to_py(py, &metrics::evaluate(&pairs, vocab_size).map_err(err)?)
}

/// `(threshold, precision, recall)` points of the global-threshold sweep.
#[pyfunction]
#[pyo3(signature = (scores, truth, n_points = 50))]
fn pr_curve(scores: Vec<Vec<f64>>, truth: Vec<Vec<usize>>, n_points: usize) -> PyResult<Vec<(f64, f64, f64)>> {
    let k = scores.first().map_or(0, Vec::len);
    let truths = truth.iter().map(|t| label_set(t, k)).collect::<PyResult<Vec<_>>>()?;
    Ok(metrics::pr_curve(&scores, &truths, n_points)
        .map_err(err)?
        .into_iter()
        .map(|p| (p.threshold, p.precision, p.recall))
        .collect())
}

#[pyfunction]
fn top_k(scores: Vec<f64>, k: usize) -> PyResult<Vec<usize>> {
    let set = decision::decide(&DecisionRule::TopK(k), &scores, &[]).map_err(err)?;
    Ok(set.to_one_based())
}

#[pyfunction]
fn global_threshold(scores: Vec<f64>, theta: f64) -> PyResult<Vec<usize>> {
    let set = decision::decide(&DecisionRule::GlobalThreshold(theta), &scores, &[]).map_err(err)?;
    Ok(set.to_one_based())
}

/// Minimizes the exact surrogate risk and checks it against the marginal
/// ranking. Give either independent `marginals` or a joint as `subsets`
/// (`[(labels, probability), ...]`) with `vocab_size`.
#[pyfunction]
#[pyo3(signature = (marginals = None, subsets = None, vocab_size = None, tol = 1e-3))]
fn bayes_check<'py>(
    py: Python<'py>,
    marginals: Option<Vec<f64>>,
    subsets: Option<Vec<(Vec<usize>, f64)>>,
    vocab_size: Option<usize>,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let dist = match (marginals, subsets, vocab_size) {
        (Some(p), None, _) => LabelDistribution::independent(p).map_err(err)?,
        (None, Some(entries), Some(k)) => {
            if k > data::MAX_JOINT_LABELS {
                return Err(err(lsep::Error::EnumerationCap {
                    vocab_size: k,
                    cap: data::MAX_JOINT_LABELS,
                }));
            }
            let entries = entries
                .iter()
                .map(|(l, p)| Ok((label_set(l, k)?, *p)))
                .collect::<PyResult<Vec<_>>>()?;
            LabelDistribution::from_subsets(k, &entries).map_err(err)?
        }
        _ => {
            return Err(PyValueError::new_err(
                "give marginals, or subsets together with vocab_size",
            ))
        }
    };
    json_to_py(py, &consistency::verify_theorem1(&dist, tol).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (seed = 0, trials = 100))]
fn gradcheck<'py>(py: Python<'py>, seed: u64, trials: usize) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &lsep::gradcheck::run_all(seed, trials).map_err(err)?)
}

/// Synthetic `(features, labels)` with independent label marginals.
#[pyfunction]
#[pyo3(signature = (marginals, n_samples, feature_dim, noise_sigma = 0.0, seed = 0, feature_mode = "cluster-per-subset"))]
fn generate_synthetic(
    marginals: Vec<f64>,
    n_samples: usize,
    feature_dim: usize,
    noise_sigma: f64,
    seed: u64,
    feature_mode: &str,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<usize>>)> {
    let feature_mode = match feature_mode {
        "cluster-per-subset" => FeatureMode::ClusterPerSubset,
        "linear-logits" => FeatureMode::LinearLogits,
        other => return Err(PyValueError::new_err(format!("unknown feature mode {other:?}"))),
    };
    let ds = data::generate_synthetic(&SyntheticSpec {
        dist: LabelDistribution::independent(marginals).map_err(err)?,
        n_samples,
        feature_dim,
        feature_mode,
        noise_sigma,
        seed,
    })
    .map_err(err)?;
    Ok(ds
        .samples
        .into_iter()
        .map(|s| (s.features, s.labels.to_one_based()))
        .unzip())
}

/// Label prediction network.
#[pyclass(name = "Predictor")]
struct PyPredictor {
    inner: PredictorModel,
}

#[pymethods]
impl PyPredictor {
    /// Trains a predictor; `hidden = 0` gives the linear model. Returns the
    /// model and the per-epoch mean losses.
    #[staticmethod]
    #[pyo3(signature = (features, labels, vocab_size, loss = "lsep", epochs = 10, learning_rate = 0.001, hidden = 64, batch_size = 32, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        features: Vec<Vec<f64>>,
        labels: Vec<Vec<usize>>,
        vocab_size: usize,
        loss: &str,
        epochs: usize,
        learning_rate: f64,
        hidden: usize,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let ds = dataset(features, labels, vocab_size)?;
        let cfg = TrainConfig {
            loss: parse_loss(loss)?,
            architecture: if hidden == 0 {
                Architecture::Linear
            } else {
                Architecture::Mlp { hidden }
            },
            epochs,
            learning_rate,
            batch_size,
            seed,
            ..TrainConfig::default()
        };
        let (inner, log) = predictor::train(&ds, &cfg).map_err(err)?;
        Ok((PyPredictor { inner }, log.epoch_losses))
    }

    fn scores(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        features
            .iter()
            .map(|x| self.inner.forward(x).map(|(s, _)| s).map_err(err))
            .collect()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&Model::Predictor(self.inner.clone()), &path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyPredictor {
            inner: checkpoint::load_predictor(&path).map_err(err)?,
        })
    }
}

/// Learned label-count or per-class threshold head.
#[pyclass(name = "DecisionHead")]
struct PyDecisionHead {
    inner: DecisionModel,
}

impl PyDecisionHead {
    fn rule(&self) -> DecisionRule {
        match self.inner.head {
            decision::DecisionHead::Count { .. } => DecisionRule::LearnedCount(self.inner.clone()),
            decision::DecisionHead::Threshold => DecisionRule::LearnedThreshold(self.inner.clone()),
        }
    }
}

#[pymethods]
impl PyDecisionHead {
    /// Per-class threshold head trained on the frozen predictor's features.
    #[staticmethod]
    #[pyo3(signature = (predictor, features, labels, epochs = 50, learning_rate = 0.001, seed = 0))]
    fn train_threshold(
        predictor: &PyPredictor,
        features: Vec<Vec<f64>>,
        labels: Vec<Vec<usize>>,
        epochs: usize,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let ds = dataset(features, labels, predictor.inner.vocab_size)?;
        let cfg = DecisionConfig {
            epochs,
            learning_rate,
            seed,
            ..DecisionConfig::default()
        };
        let (inner, _) = decision::train_threshold_head(&ds, &predictor.inner, &cfg).map_err(err)?;
        Ok(PyDecisionHead { inner })
    }

    /// Label-count head; counts above `max_labels` are clipped.
    #[staticmethod]
    #[pyo3(signature = (predictor, features, labels, max_labels = 4, epochs = 50, learning_rate = 0.001, seed = 0))]
    fn train_count(
        predictor: &PyPredictor,
        features: Vec<Vec<f64>>,
        labels: Vec<Vec<usize>>,
        max_labels: usize,
        epochs: usize,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let ds = dataset(features, labels, predictor.inner.vocab_size)?;
        let cfg = DecisionConfig {
            max_labels,
            epochs,
            learning_rate,
            seed,
            ..DecisionConfig::default()
        };
        let (inner, _) = decision::train_count_head(&ds, &predictor.inner, &cfg).map_err(err)?;
        Ok(PyDecisionHead { inner })
    }

    /// Predicted label sets (1-based) for each feature vector.
    fn decide(&self, predictor: &PyPredictor, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<usize>>> {
        let rule = self.rule();
        let samples = features
            .into_iter()
            .map(|x| LabeledSample {
                features: x,
                labels: LabelSet::empty(),
            })
            .collect();
        let ds = Dataset::new(samples, predictor.inner.vocab_size, predictor.inner.feature_dim).map_err(err)?;
        Ok(experiment::predict_labels(&predictor.inner, &rule, &ds)
            .map_err(err)?
            .iter()
            .map(LabelSet::to_one_based)
            .collect())
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner.head {
            decision::DecisionHead::Count { .. } => "count",
            decision::DecisionHead::Threshold => "threshold",
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&Model::Decision(self.inner.clone()), &path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDecisionHead {
            inner: checkpoint::load_decision(&path).map_err(err)?,
        })
    }
}

#[pymodule]
fn lsep_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(sample_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(pr_curve, m)?)?;
    m.add_function(wrap_pyfunction!(top_k, m)?)?;
    m.add_function(wrap_pyfunction!(global_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(bayes_check, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_class::<PyPredictor>()?;
    m.add_class::<PyDecisionHead>()?;
    m.add("LOSS_KINDS", LossKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>())?;
    Ok(())
}
