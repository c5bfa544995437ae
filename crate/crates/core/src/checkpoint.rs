//! JSON checkpoints for predictor and decision models.
//!
//! ```json
//! {"format": "lsep-checkpoint", "version": 1, "kind": "predictor",
//!  "architecture": {"type": "mlp", "hidden": 64}, "feature_dim": 8,
//!  "vocab_size": 5, "net": {"layers": [{"inputs": 8, "outputs": 64,
//!  "weight": [...row-major...], "bias": [...]}, ...]}}
//! ```
//!
//! Decision checkpoints carry `"kind": "decision"` and a `head` tag instead
//! of `architecture`. Floats are written in shortest round-trip form, so
//! save followed by load reproduces every parameter bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decision::DecisionModel;
use crate::error::{Error, Result};
use crate::predictor::PredictorModel;

pub const FORMAT: &str = "lsep-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Predictor(PredictorModel),
    Decision(DecisionModel),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: Model,
}

pub fn to_json(model: &Model) -> Result<String> {
    Ok(serde_json::to_string(&Envelope {
        format: FORMAT.into(),
        version: VERSION,
        model: model.clone(),
    })?)
}

pub fn from_json(s: &str) -> Result<Model> {
    let env: Envelope = serde_json::from_str(s)?;
    check(env)
}

fn check(env: Envelope) -> Result<Model> {
    if env.format != FORMAT || env.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            env.format, env.version
        )));
    }
    match &env.model {
        Model::Predictor(p) => p.validate()?,
        Model::Decision(d) => d.validate()?,
    }
    Ok(env.model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(to_json(model)?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let env: Envelope = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    check(env)
}

pub fn load_predictor(path: &Path) -> Result<PredictorModel> {
    match load(path)? {
        Model::Predictor(p) => Ok(p),
        Model::Decision(_) => Err(Error::Checkpoint(format!(
            "{} holds a decision model, expected a predictor",
            path.display()
        ))),
    }
}

pub fn load_decision(path: &Path) -> Result<DecisionModel> {
    match load(path)? {
        Model::Decision(d) => Ok(d),
        Model::Predictor(_) => Err(Error::Checkpoint(format!(
            "{} holds a predictor, expected a decision model",
            path.display()
        ))),
    }
}
