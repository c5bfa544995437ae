//! Multi-label classification with the log-sum-exp pairwise (LSEP) ranking
//! loss and learned label decision.
//!
//! Pipeline: a [`predictor`] maps features to per-label scores and is
//! trained under one of the [`losses`]; a [`decision`] rule turns scores into
//! label sets; [`metrics`] scores the result. [`consistency`] checks the
//! population minimizer of the pairwise exponential surrogate against the
//! Bayes ranking rule on small label spaces.

pub mod checkpoint;
pub mod cli;
pub mod consistency;
pub mod data;
pub mod decision;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod predictor;
pub mod rng;

pub use data::{Dataset, LabelDistribution, LabelSet, LabeledSample};
pub use decision::{DecisionModel, DecisionRule};
pub use error::{Error, Result};
pub use losses::{LossKind, LossResult, PairSample};
pub use metrics::{EvalPair, MetricsReport};
pub use predictor::{PredictorModel, TrainConfig};
