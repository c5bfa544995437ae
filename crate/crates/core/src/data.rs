//! Datasets, label sets, file I/O and synthetic data with known label
//! distributions.
//!
//! Labels are 0-based everywhere inside the crate. Files, manifests and
//! user-facing messages use 1-based indices; conversion happens only in this
//! module's readers and writers (and in [`LabelSet::to_one_based`]).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, sub_seed, Rng, Stream};

/// Largest vocabulary for which a joint table over all subsets is accepted.
pub const MAX_JOINT_LABELS: usize = 12;

/// A sorted, duplicate-free set of 0-based label indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabelSet(Vec<usize>);

impl LabelSet {
    pub fn empty() -> Self {
        LabelSet(Vec::new())
    }

    /// Builds a set from 0-based indices, sorting and deduplicating.
    pub fn new(labels: impl IntoIterator<Item = usize>, vocab_size: usize) -> Result<Self> {
        let mut v: Vec<usize> = labels.into_iter().collect();
        if let Some(&bad) = v.iter().find(|&&l| l >= vocab_size) {
            return Err(Error::LabelOutOfRange {
                label: bad + 1,
                vocab_size,
            });
        }
        v.sort_unstable();
        v.dedup();
        Ok(LabelSet(v))
    }

    /// Builds a set from 1-based indices as they appear in files.
    pub fn from_one_based(labels: impl IntoIterator<Item = usize>, vocab_size: usize) -> Result<Self> {
        let mut v = Vec::new();
        for l in labels {
            if l == 0 || l > vocab_size {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    vocab_size,
                });
            }
            v.push(l - 1);
        }
        Self::new(v, vocab_size)
    }

    /// Set of labels whose bit is set in `mask`.
    pub fn from_mask(mask: usize, vocab_size: usize) -> Self {
        LabelSet((0..vocab_size).filter(|k| mask >> k & 1 == 1).collect())
    }

    pub fn mask(&self) -> usize {
        self.0.iter().fold(0, |m, &k| m | (1 << k))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.0.binary_search(&label).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|l| l + 1).collect()
    }

    /// Labels in `[0, vocab_size)` that are not in the set.
    pub fn complement(&self, vocab_size: usize) -> Vec<usize> {
        (0..vocab_size).filter(|&k| !self.contains(k)).collect()
    }

    pub fn indicator(&self, vocab_size: usize) -> Vec<f64> {
        let mut y = vec![0.0; vocab_size];
        for k in self.iter() {
            y[k] = 1.0;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub vocab_size: usize,
    pub feature_dim: usize,
}

impl Dataset {
    /// Validates shapes and label ranges. Empty label sets are accepted here;
    /// training entry points reject them (see [`Dataset::check_trainable`]).
    pub fn new(samples: Vec<LabeledSample>, vocab_size: usize, feature_dim: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary size must be at least 2, got {vocab_size}"
            )));
        }
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    got: s.features.len(),
                });
            }
            if let Some(l) = s.labels.iter().find(|&l| l >= vocab_size) {
                return Err(Error::LabelOutOfRange {
                    label: l + 1,
                    vocab_size,
                });
            }
        }
        Ok(Dataset {
            samples,
            vocab_size,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Errors unless every sample has at least one positive and one negative label.
    pub fn check_trainable(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.labels.is_empty() {
                return Err(Error::EmptyLabels { index: i });
            }
            if s.labels.len() >= self.vocab_size {
                return Err(Error::NoNegatives);
            }
        }
        Ok(())
    }

    /// Drops samples that have no positive or no negative label.
    pub fn trainable(&self) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| !s.labels.is_empty() && s.labels.len() < self.vocab_size)
                .cloned()
                .collect(),
            vocab_size: self.vocab_size,
            feature_dim: self.feature_dim,
        }
    }

    pub fn labels(&self) -> Vec<LabelSet> {
        self.samples.iter().map(|s| s.labels.clone()).collect()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            vocab_size: self.vocab_size,
            feature_dim: self.feature_dim,
        }
    }
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(DataFormat::Csv),
            "jsonl" => Some(DataFormat::Jsonl),
            _ => None,
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "jsonl" => Ok(DataFormat::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown data format {other:?}"))),
        }
    }
}

/// Sidecar manifest stored next to a data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
}

/// `data/train.jsonl` -> `data/train.manifest.json`.
pub fn manifest_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("manifest.json")
}

#[derive(Deserialize, Serialize)]
struct JsonlRecord {
    features: Vec<f64>,
    labels: Vec<usize>,
}

/// Loads a dataset. The vocabulary size comes from `vocab_size` when given,
/// otherwise from the sidecar manifest.
pub fn load_dataset(path: &Path, format: DataFormat, vocab_size: Option<usize>) -> Result<Dataset> {
    let vocab_size = match vocab_size {
        Some(k) => k,
        None => {
            let mpath = manifest_path(path);
            let file = File::open(&mpath).map_err(|e| {
                Error::InvalidArgument(format!(
                    "vocabulary size not given and manifest {} unreadable: {e}",
                    mpath.display()
                ))
            })?;
            let m: Manifest = serde_json::from_reader(BufReader::new(file))?;
            m.vocab_size
        }
    };
    if vocab_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "vocabulary size must be at least 2, got {vocab_size}"
        )));
    }
    match format {
        DataFormat::Csv => load_csv(path, vocab_size),
        DataFormat::Jsonl => load_jsonl(path, vocab_size),
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Attaches a file position to label-range and dimension errors.
fn locate(path: &Path, line: usize, e: Error) -> Error {
    match e {
        Error::LabelOutOfRange { .. } | Error::DimensionMismatch { .. } | Error::EmptyLabels { .. } => {
            parse_err(path, line, e.to_string())
        }
        other => other,
    }
}

fn load_csv(path: &Path, vocab_size: usize) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if header.is_empty() || header.get(header.len() - 1) != Some("labels") {
        return Err(parse_err(path, 1, "last header column must be `labels`"));
    }
    let feature_dim = header.len() - 1;
    let mut samples = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != feature_dim + 1 {
            return Err(locate(
                path,
                line,
                Error::DimensionMismatch {
                    expected: feature_dim,
                    got: rec.len().saturating_sub(1),
                },
            ));
        }
        let features = rec
            .iter()
            .take(feature_dim)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(path, line, format!("bad feature value {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let raw = rec.get(feature_dim).unwrap_or("");
        if raw.is_empty() {
            return Err(locate(path, line, Error::EmptyLabels { index: i }));
        }
        let ids = raw
            .split('|')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| parse_err(path, line, format!("bad label {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = LabelSet::from_one_based(ids, vocab_size).map_err(|e| locate(path, line, e))?;
        samples.push(LabeledSample { features, labels });
    }
    Dataset::new(samples, vocab_size, feature_dim)
}

fn load_jsonl(path: &Path, vocab_size: usize) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    let mut feature_dim = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let d = *feature_dim.get_or_insert(rec.features.len());
        if rec.features.len() != d {
            return Err(locate(
                path,
                lineno,
                Error::DimensionMismatch {
                    expected: d,
                    got: rec.features.len(),
                },
            ));
        }
        if rec.labels.is_empty() {
            return Err(locate(path, lineno, Error::EmptyLabels { index: samples.len() }));
        }
        let labels =
            LabelSet::from_one_based(rec.labels, vocab_size).map_err(|e| locate(path, lineno, e))?;
        samples.push(LabeledSample {
            features: rec.features,
            labels,
        });
    }
    Dataset::new(samples, vocab_size, feature_dim.unwrap_or(0))
}

/// Writes the dataset and its sidecar manifest.
pub fn write_dataset(ds: &Dataset, path: &Path, format: DataFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        DataFormat::Csv => {
            let mut cw = csv::Writer::from_writer(&mut w);
            let mut header: Vec<String> = (1..=ds.feature_dim).map(|j| format!("f{j}")).collect();
            header.push("labels".into());
            cw.write_record(&header).map_err(csv_io)?;
            for s in &ds.samples {
                let mut row: Vec<String> = s.features.iter().map(|v| format!("{v:?}")).collect();
                row.push(
                    s.labels
                        .to_one_based()
                        .iter()
                        .map(|l| l.to_string())
                        .collect::<Vec<_>>()
                        .join("|"),
                );
                cw.write_record(&row).map_err(csv_io)?;
            }
            cw.flush()?;
        }
        DataFormat::Jsonl => {
            for s in &ds.samples {
                let rec = JsonlRecord {
                    features: s.features.clone(),
                    labels: s.labels.to_one_based(),
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
        }
    }
    w.flush()?;
    let manifest = Manifest {
        vocab_size: ds.vocab_size,
        feature_dim: Some(ds.feature_dim),
    };
    std::fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

// ---------------------------------------------------------------------------
// Label distributions
// ---------------------------------------------------------------------------

/// Exact distribution over label subsets.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelDistribution {
    /// Each label present independently with its own probability.
    Independent { probs: Vec<f64> },
    /// Probability of every subset, indexed by bitmask (bit `k` = label `k`).
    Joint { vocab_size: usize, table: Vec<f64> },
}

impl LabelDistribution {
    pub fn independent(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidArgument("need at least 2 labels".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!("marginal {p} outside [0, 1]")));
        }
        Ok(LabelDistribution::Independent { probs })
    }

    pub fn joint(vocab_size: usize, table: Vec<f64>) -> Result<Self> {
        if vocab_size > MAX_JOINT_LABELS {
            return Err(Error::EnumerationCap {
                vocab_size,
                cap: MAX_JOINT_LABELS,
            });
        }
        if vocab_size < 2 {
            return Err(Error::InvalidArgument("need at least 2 labels".into()));
        }
        if table.len() != 1 << vocab_size {
            return Err(Error::InvalidArgument(format!(
                "joint table has {} entries, expected {}",
                table.len(),
                1usize << vocab_size
            )));
        }
        if table.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidArgument("negative or non-finite probability".into()));
        }
        let total: f64 = table.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "joint probabilities sum to {total}, not 1"
            )));
        }
        Ok(LabelDistribution::Joint { vocab_size, table })
    }

    /// Joint distribution from explicit `(subset, probability)` entries;
    /// unlisted subsets get probability 0.
    pub fn from_subsets(vocab_size: usize, entries: &[(LabelSet, f64)]) -> Result<Self> {
        if vocab_size > MAX_JOINT_LABELS {
            return Err(Error::EnumerationCap {
                vocab_size,
                cap: MAX_JOINT_LABELS,
            });
        }
        let mut table = vec![0.0; 1 << vocab_size];
        for (set, p) in entries {
            if let Some(l) = set.iter().find(|&l| l >= vocab_size) {
                return Err(Error::LabelOutOfRange {
                    label: l + 1,
                    vocab_size,
                });
            }
            table[set.mask()] += p;
        }
        Self::joint(vocab_size, table)
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            LabelDistribution::Independent { probs } => probs.len(),
            LabelDistribution::Joint { vocab_size, .. } => *vocab_size,
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> LabelSet {
        match self {
            LabelDistribution::Independent { probs } => {
                LabelSet((0..probs.len()).filter(|&k| rng.random::<f64>() < probs[k]).collect())
            }
            LabelDistribution::Joint { vocab_size, table } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut last = 0;
                for (mask, &p) in table.iter().enumerate() {
                    if p > 0.0 {
                        last = mask;
                        acc += p;
                        if u < acc {
                            return LabelSet::from_mask(mask, *vocab_size);
                        }
                    }
                }
                LabelSet::from_mask(last, *vocab_size)
            }
        }
    }

    /// Per-label inclusion probabilities.
    pub fn marginals(&self) -> Vec<f64> {
        match self {
            LabelDistribution::Independent { probs } => probs.clone(),
            LabelDistribution::Joint { vocab_size, table } => {
                let mut m = vec![0.0; *vocab_size];
                for (mask, &p) in table.iter().enumerate() {
                    for (k, mk) in m.iter_mut().enumerate() {
                        if mask >> k & 1 == 1 {
                            *mk += p;
                        }
                    }
                }
                m
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Every label subset sits at its own centroid `A (2·1_Y − 1)`.
    ClusterPerSubset,
    /// `x ~ N(0, I)`, labels drawn from per-label sigmoids of a hidden linear map.
    LinearLogits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dist: LabelDistribution,
    pub n_samples: usize,
    pub feature_dim: usize,
    pub feature_mode: FeatureMode,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Draws `n_samples` i.i.d. samples. The same spec always yields the same
/// dataset.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    if spec.feature_dim == 0 {
        return Err(Error::InvalidArgument("feature_dim must be at least 1".into()));
    }
    if !(spec.noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument("noise_sigma must be nonnegative".into()));
    }
    // Re-validate: enum values can be built without the checked constructors.
    let dist = match &spec.dist {
        LabelDistribution::Independent { probs } => LabelDistribution::independent(probs.clone())?,
        LabelDistribution::Joint { vocab_size, table } => {
            LabelDistribution::joint(*vocab_size, table.clone())?
        }
    };
    let k = dist.vocab_size();
    let d = spec.feature_dim;

    // Hidden structure and label draws come from separate streams so that the
    // generator matrix does not depend on n_samples.
    let mut structure = rng_from_seed(sub_seed(spec.seed, Stream::Init));
    let mut rng = rng_from_seed(sub_seed(spec.seed, Stream::Data));
    let mut noise = rng_from_seed(sub_seed(spec.seed, Stream::Noise));

    let gaussian = |r: &mut Rng| -> f64 { StandardNormal.sample(r) };

    let mut samples = Vec::with_capacity(spec.n_samples);
    match spec.feature_mode {
        FeatureMode::ClusterPerSubset => {
            // d x k mixing matrix, columns scaled to unit norm.
            let mut a = vec![0.0; d * k];
            for col in 0..k {
                let mut norm = 0.0;
                for row in 0..d {
                    let v = gaussian(&mut structure);
                    a[row * k + col] = v;
                    norm += v * v;
                }
                let norm = norm.sqrt().max(f64::MIN_POSITIVE);
                for row in 0..d {
                    a[row * k + col] /= norm;
                }
            }
            for _ in 0..spec.n_samples {
                let labels = dist.sample(&mut rng);
                let signs: Vec<f64> = (0..k)
                    .map(|j| if labels.contains(j) { 1.0 } else { -1.0 })
                    .collect();
                let features = (0..d)
                    .map(|row| {
                        let c: f64 = (0..k).map(|col| a[row * k + col] * signs[col]).sum();
                        c + spec.noise_sigma * gaussian(&mut noise)
                    })
                    .collect();
                samples.push(LabeledSample { features, labels });
            }
        }
        FeatureMode::LinearLogits => {
            let scale = 3.0 / (d as f64).sqrt();
            let w: Vec<f64> = (0..k * d).map(|_| scale * gaussian(&mut structure)).collect();
            let bias: Vec<f64> = dist
                .marginals()
                .iter()
                .map(|&p| {
                    let p = p.clamp(1e-6, 1.0 - 1e-6);
                    (p / (1.0 - p)).ln()
                })
                .collect();
            for _ in 0..spec.n_samples {
                let x: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
                let labels = LabelSet(
                    (0..k)
                        .filter(|&j| {
                            let z: f64 = bias[j] + (0..d).map(|i| w[j * d + i] * x[i]).sum::<f64>();
                            let p = 1.0 / (1.0 + (-z).exp());
                            rng.random::<f64>() < p
                        })
                        .collect(),
                );
                let features = x
                    .iter()
                    .map(|v| v + spec.noise_sigma * gaussian(&mut noise))
                    .collect();
                samples.push(LabeledSample { features, labels });
            }
        }
    }
    Dataset::new(samples, k, d)
}

/// Independent label noise: with probability `rate`, one positive label of a
/// sample is swapped for a uniformly chosen negative one. Label counts are
/// preserved.
pub fn corrupt_labels(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("noise rate {rate} outside [0, 1]")));
    }
    let mut rng = rng_from_seed(sub_seed(seed, Stream::Noise));
    let k = ds.vocab_size;
    let mut out = ds.clone();
    for s in &mut out.samples {
        let flip = rng.random::<f64>() < rate;
        let negatives = s.labels.complement(k);
        if !flip || s.labels.is_empty() || negatives.is_empty() {
            continue;
        }
        let drop = s.labels.as_slice()[rng.random_range(0..s.labels.len())];
        let add = negatives[rng.random_range(0..negatives.len())];
        let kept = s.labels.iter().filter(|&l| l != drop).chain(std::iter::once(add));
        s.labels = LabelSet::new(kept, k)?;
    }
    Ok(out)
}

/// Random partition into `(kept, held_out)`; held-out size is
/// `round(n * holdout_fraction)`. Both halves keep the original order.
pub fn split(ds: &Dataset, holdout_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction {holdout_fraction} outside (0, 1)"
        )));
    }
    let n = ds.len();
    let n_hold = (n as f64 * holdout_fraction).round() as usize;
    if n_hold == 0 || n_hold >= n {
        return Err(Error::InvalidArgument(format!(
            "split of {n} samples at fraction {holdout_fraction} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(sub_seed(seed, Stream::Split)));
    let mut hold = idx[..n_hold].to_vec();
    let mut keep = idx[n_hold..].to_vec();
    hold.sort_unstable();
    keep.sort_unstable();
    Ok((ds.subset(&keep), ds.subset(&hold)))
}
