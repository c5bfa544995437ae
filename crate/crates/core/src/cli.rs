//! Command-line front end: experiment configs, subcommands and report files.
//!
//! Every command is a pure function of its config (seed included), so
//! `metrics.json` is byte-identical across reruns. Wall-clock timings go to
//! a separate `timings.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::{self, Model};
use crate::consistency::{self, TheoremReport};
use crate::data::{
    self, DataFormat, Dataset, FeatureMode, LabelDistribution, LabelSet, SyntheticSpec,
};
use crate::decision::DecisionConfig;
use crate::error::Error;
use crate::experiment::{self, format_table, Heads, RuleResult, RuleSpec, Splits};
use crate::gradcheck;
use crate::losses::LossKind;
use crate::metrics;
use crate::predictor::{self, predict_scores, PredictorModel, TrainConfig};
use crate::rng::{sub_seed, Stream};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_NUMERIC: u8 = 2;
pub const EXIT_VERIFY: u8 = 3;

// ---------------------------------------------------------------------------
// Arguments
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "lsep", version, about = "LSEP ranking loss and learned label decision")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the predictor and the decision heads, then score every rule.
    Train(Common),
    /// Score saved checkpoints on the config's test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding the checkpoints (defaults to --out).
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Train one predictor per configured loss on identical data.
    CompareLosses(Common),
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Minimize the exact surrogate risk of a label distribution and check
    /// the minimizer against the marginal ranking.
    BayesCheck {
        /// JSON file with `dist` and optional `tol`.
        #[arg(long, conflicts_with = "independent", required_unless_present = "independent")]
        config: Option<PathBuf>,
        /// Comma-separated independent marginals, e.g. `0.9,0.5,0.1`.
        #[arg(long, value_delimiter = ',')]
        independent: Option<Vec<f64>>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Write the config's synthetic dataset to disk.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "csv")]
        data_format: DataFormat,
    },
}

impl clap::builder::ValueParserFactory for DataFormat {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<DataFormat>().map_err(|e| e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

/// One experiment. Relative data paths resolve against the config's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of all randomness; `train.seed` and `decision.seed` are replaced
    /// by it.
    pub seed: u64,
    pub data: DataSource,
    /// Separate test data; when absent, `test_fraction` of `data` is held out.
    #[serde(default)]
    pub test_data: Option<DataSource>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Fraction of the training part kept aside for choosing baseline rules;
    /// 0 disables the validation split.
    #[serde(default = "default_holdout_fraction")]
    pub holdout_fraction: f64,
    /// Rate of label corruption applied to the training part.
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub decision: DecisionConfig,
    #[serde(default = "default_rules")]
    pub rules: Vec<RuleSpec>,
    /// Losses for `compare-losses`.
    #[serde(default = "default_losses")]
    pub losses: Vec<LossKind>,
    #[serde(default = "default_pr_points")]
    pub pr_points: usize,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_holdout_fraction() -> f64 {
    0.05
}

fn default_rules() -> Vec<RuleSpec> {
    RuleSpec::TABLE2.to_vec()
}

fn default_losses() -> Vec<LossKind> {
    LossKind::ALL.to_vec()
}

fn default_pr_points() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    File {
        path: PathBuf,
        /// Inferred from the extension when absent.
        #[serde(default)]
        format: Option<DataFormat>,
        /// Read from the sidecar manifest when absent.
        #[serde(default)]
        vocab_size: Option<usize>,
    },
    Synthetic(SyntheticSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub dist: DistSpec,
    pub n_samples: usize,
    pub feature_dim: usize,
    #[serde(default = "default_feature_mode")]
    pub feature_mode: FeatureMode,
    #[serde(default)]
    pub noise_sigma: f64,
}

fn default_feature_mode() -> FeatureMode {
    FeatureMode::ClusterPerSubset
}

/// Label distribution as written in configs. Labels are 1-based.
///
/// ```json
/// {"independent": [0.9, 0.5, 0.1]}
/// {"joint": {"vocab_size": 3, "subsets": [[[1, 2], 0.6], [[3], 0.4]]}}
/// {"table": {"vocab_size": 2, "probs": [0.1, 0.2, 0.3, 0.4]}}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    Independent(Vec<f64>),
    Joint {
        vocab_size: usize,
        subsets: Vec<(Vec<usize>, f64)>,
    },
    /// Probability per bitmask, bit `k` standing for label `k + 1`.
    Table { vocab_size: usize, probs: Vec<f64> },
}

impl DistSpec {
    pub fn build(&self) -> crate::Result<LabelDistribution> {
        match self {
            DistSpec::Independent(p) => LabelDistribution::independent(p.clone()),
            DistSpec::Joint { vocab_size, subsets } => {
                if *vocab_size > data::MAX_JOINT_LABELS {
                    return Err(Error::EnumerationCap {
                        vocab_size: *vocab_size,
                        cap: data::MAX_JOINT_LABELS,
                    });
                }
                let entries = subsets
                    .iter()
                    .map(|(labels, p)| Ok((LabelSet::from_one_based(labels.iter().copied(), *vocab_size)?, *p)))
                    .collect::<crate::Result<Vec<_>>>()?;
                LabelDistribution::from_subsets(*vocab_size, &entries)
            }
            DistSpec::Table { vocab_size, probs } => LabelDistribution::joint(*vocab_size, probs.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesCheckConfig {
    pub dist: DistSpec,
    #[serde(default = "default_bayes_tol")]
    pub tol: f64,
}

fn default_bayes_tol() -> f64 {
    1e-3
}

/// Parsed config plus its raw JSON (echoed into reports) and the directory
/// relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub raw: Value,
    pub base_dir: PathBuf,
}

/// Parses a config; errors name the offending field, e.g. `train.loss`.
pub fn parse_config<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path.is_empty() || path == "." {
            CliError::usage(format!("{origin}: {}", e.inner()))
        } else {
            CliError::usage(format!("{origin}: field `{path}`: {}", e.inner()))
        }
    })
}

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<LoadedConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let origin = path.display().to_string();
    let mut config: ExperimentConfig = parse_config(&text, &origin)?;
    let mut raw: Value = serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{origin}: {e}")))?;
    if let Some(s) = seed {
        config.seed = s;
        raw["seed"] = json!(s);
    }
    config.train.seed = config.seed;
    config.decision.seed = config.seed;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, raw, base_dir })
}

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e).into()
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::Train(c) => cmd_train(&c),
        Command::Evaluate { common, model_dir } => cmd_evaluate(&common, model_dir.as_deref()),
        Command::CompareLosses(c) => cmd_compare_losses(&c),
        Command::Gradcheck {
            seed,
            trials,
            out,
            format,
        } => cmd_gradcheck(seed, trials, out.as_deref(), format),
        Command::BayesCheck {
            config,
            independent,
            tol,
            out,
            format,
        } => cmd_bayes_check(config.as_deref(), independent, tol, out.as_deref(), format),
        Command::GenData { common, data_format } => cmd_gen_data(&common, data_format),
    }
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

fn load_source(src: &DataSource, base_dir: &Path, seed: u64) -> crate::Result<Dataset> {
    match src {
        DataSource::File {
            path,
            format,
            vocab_size,
        } => {
            let path = base_dir.join(path);
            let format = match format {
                Some(f) => *f,
                None => DataFormat::from_path(&path).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "cannot infer the format of {}; set data.file.format",
                        path.display()
                    ))
                })?,
            };
            data::load_dataset(&path, format, *vocab_size)
        }
        DataSource::Synthetic(s) => data::generate_synthetic(&SyntheticSpec {
            dist: s.dist.build()?,
            n_samples: s.n_samples,
            feature_dim: s.feature_dim,
            feature_mode: s.feature_mode,
            noise_sigma: s.noise_sigma,
            seed,
        }),
    }
}

fn needs_validation(rules: &[RuleSpec]) -> bool {
    rules.iter().any(|r| matches!(r, RuleSpec::TopKCv | RuleSpec::ThresholdCv))
}

/// Builds train/validation/test splits. Synthetic data is drawn from
/// `sub_seed(seed, Data)` (the test source from `sub_seed(seed + 1, Data)`);
/// the test split uses `seed`, the validation split `seed + 1`. Label noise
/// touches only the training part. Samples whose label set is empty or
/// full are dropped from the training and validation parts.
pub fn build_splits(cfg: &ExperimentConfig, base_dir: &Path) -> crate::Result<Splits> {
    let seed = cfg.seed;
    let all = load_source(&cfg.data, base_dir, sub_seed(seed, Stream::Data))?;
    let (rest, test) = match &cfg.test_data {
        Some(src) => {
            let test = load_source(src, base_dir, sub_seed(seed.wrapping_add(1), Stream::Data))?;
            if test.vocab_size != all.vocab_size || test.feature_dim != all.feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: all.feature_dim,
                    got: test.feature_dim,
                });
            }
            (all, test)
        }
        None => data::split(&all, cfg.test_fraction, seed)?,
    };
    let rest = if cfg.label_noise > 0.0 {
        data::corrupt_labels(&rest, cfg.label_noise, seed)?
    } else {
        rest
    };
    let rest = rest.trainable();
    let (train, val) = if cfg.holdout_fraction > 0.0 {
        let (train, val) = data::split(&rest, cfg.holdout_fraction, seed.wrapping_add(1))?;
        (train, Some(val))
    } else {
        (rest, None)
    };
    if train.is_empty() {
        return Err(Error::InvalidArgument("no trainable samples".into()));
    }
    if val.is_none() && needs_validation(&cfg.rules) {
        return Err(Error::InvalidArgument(
            "cross-validated rules need holdout_fraction > 0".into(),
        ));
    }
    Ok(Splits { train, val, test })
}

fn split_sizes(s: &Splits) -> Value {
    json!({
        "train": s.train.len(),
        "val": s.val.as_ref().map_or(0, Dataset::len),
        "test": s.test.len(),
    })
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

struct Timings(BTreeMap<String, f64>);

impl Timings {
    fn new() -> Self {
        Timings(BTreeMap::new())
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.0.insert(stage.to_string(), t.elapsed().as_secs_f64());
        out
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn write_pr(out: &Path, name: &str, points: &[metrics::PrPoint]) -> CliResult<()> {
    let f = fs::File::create(out.join(format!("pr_curve_{name}.csv")))?;
    metrics::write_pr_csv(points, std::io::BufWriter::new(f))?;
    Ok(())
}

fn results_table(results: &[RuleResult], prefix: &str) -> String {
    let rows: Vec<(String, &metrics::MetricsReport)> = results
        .iter()
        .map(|r| (format!("{prefix}{}", r.rule), &r.metrics))
        .collect();
    format_table(&rows)
}

fn report_text(title: &str, raw: &Value, body: &str) -> CliResult<String> {
    Ok(format!(
        "{title}\n\nconfig:\n{}\n\n{body}",
        serde_json::to_string_pretty(raw)?
    ))
}

fn emit(format: Format, text: &str, json_value: &Value) -> CliResult<()> {
    match format {
        Format::Text => print!("{text}"),
        Format::Json => println!("{}", serde_json::to_string_pretty(json_value)?),
    }
    Ok(())
}

fn check_compatible(model: &PredictorModel, ds: &Dataset) -> crate::Result<()> {
    if model.feature_dim != ds.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: model.feature_dim,
            got: ds.feature_dim,
        });
    }
    if model.vocab_size != ds.vocab_size {
        return Err(Error::DimensionMismatch {
            expected: model.vocab_size,
            got: ds.vocab_size,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

pub fn cmd_train(c: &Common) -> CliResult<u8> {
    let lc = load_config(&c.config, c.seed)?;
    let cfg = &lc.config;
    fs::create_dir_all(&c.out)?;
    let mut timings = Timings::new();

    let splits = timings.time("data", || build_splits(cfg, &lc.base_dir))?;
    let (model, log) = timings.time("predictor", || predictor::train(&splits.train, &cfg.train))?;
    checkpoint::save(&Model::Predictor(model.clone()), &c.out.join("checkpoint_predictor.json"))?;
    let heads = timings.time("decision", || {
        experiment::train_heads(&splits.train, &model, &cfg.decision, &cfg.rules)
    })?;
    if let Some((m, _)) = &heads.count {
        checkpoint::save(&Model::Decision(m.clone()), &c.out.join("checkpoint_count.json"))?;
    }
    if let Some((m, _)) = &heads.threshold {
        checkpoint::save(&Model::Decision(m.clone()), &c.out.join("checkpoint_threshold.json"))?;
    }
    write_json(
        &c.out.join("training_log.json"),
        &json!({
            "predictor": log,
            "count_head": heads.count.as_ref().map(|h| &h.1),
            "threshold_head": heads.threshold.as_ref().map(|h| &h.1),
        }),
    )?;

    let results = timings.time("evaluate", || experiment::score_rules(&model, &heads, &splits, &cfg.rules))?;
    let scores = predict_scores(&model, &splits.test)?;
    let pr = metrics::pr_curve(&scores, &splits.test.labels(), cfg.pr_points.max(1))?;
    write_pr(&c.out, cfg.train.loss.name(), &pr)?;

    let metrics_json = json!({
        "command": "train",
        "config": lc.raw,
        "splits": split_sizes(&splits),
        "training_log": log,
        "results": results,
    });
    write_json(&c.out.join("metrics.json"), &metrics_json)?;
    write_json(&c.out.join("timings.json"), &timings.0)?;
    let table = results_table(&results, "");
    fs::write(
        c.out.join("report.txt"),
        report_text(&format!("train ({})", cfg.train.loss), &lc.raw, &table)?,
    )?;
    emit(c.format, &table, &metrics_json)?;
    Ok(EXIT_OK)
}

/// Loads the heads needed by `rules` from `dir`.
pub fn load_heads(dir: &Path, rules: &[RuleSpec]) -> crate::Result<Heads> {
    let load = |name: &str| -> crate::Result<_> {
        let m = checkpoint::load_decision(&dir.join(name))?;
        Ok(Some((
            m.clone(),
            crate::decision::HeadTrainingLog {
                head: m.head,
                epoch_losses: Vec::new(),
            },
        )))
    };
    Ok(Heads {
        count: if rules.contains(&RuleSpec::LearnedCount) {
            load("checkpoint_count.json")?
        } else {
            None
        },
        threshold: if rules.contains(&RuleSpec::LearnedThreshold) {
            load("checkpoint_threshold.json")?
        } else {
            None
        },
    })
}

pub fn cmd_evaluate(c: &Common, model_dir: Option<&Path>) -> CliResult<u8> {
    let lc = load_config(&c.config, c.seed)?;
    let cfg = &lc.config;
    let dir = model_dir.unwrap_or(&c.out);
    let model = checkpoint::load_predictor(&dir.join("checkpoint_predictor.json"))?;
    let heads = load_heads(dir, &cfg.rules)?;
    let splits = build_splits(cfg, &lc.base_dir)?;
    check_compatible(&model, &splits.test)?;
    for (m, _) in heads.count.iter().chain(&heads.threshold) {
        if m.input_dim != model.penultimate_dim() || m.vocab_size != model.vocab_size {
            return Err(Error::DimensionMismatch {
                expected: model.penultimate_dim(),
                got: m.input_dim,
            }
            .into());
        }
    }
    let results = experiment::score_rules(&model, &heads, &splits, &cfg.rules)?;
    fs::create_dir_all(&c.out)?;
    let metrics_json = json!({
        "command": "evaluate",
        "config": lc.raw,
        "splits": split_sizes(&splits),
        "results": results,
    });
    write_json(&c.out.join("metrics.json"), &metrics_json)?;
    let table = results_table(&results, "");
    fs::write(c.out.join("report.txt"), report_text("evaluate", &lc.raw, &table)?)?;
    emit(c.format, &table, &metrics_json)?;
    Ok(EXIT_OK)
}

pub fn cmd_compare_losses(c: &Common) -> CliResult<u8> {
    let lc = load_config(&c.config, c.seed)?;
    let cfg = &lc.config;
    let mut losses: Vec<LossKind> = Vec::new();
    for &l in &cfg.losses {
        if !losses.contains(&l) {
            losses.push(l);
        }
    }
    if losses.is_empty() {
        return Err(CliError::usage("field `losses` is empty"));
    }
    fs::create_dir_all(&c.out)?;
    let mut timings = Timings::new();
    let splits = timings.time("data", || build_splits(cfg, &lc.base_dir))?;

    let outcomes: Vec<(LossKind, crate::Result<experiment::Outcome>, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = losses
            .iter()
            .map(|&loss| {
                let splits = &splits;
                let train_cfg = TrainConfig {
                    loss,
                    ..cfg.train.clone()
                };
                s.spawn(move || {
                    let t = Instant::now();
                    let out = experiment::run(splits, &train_cfg, &cfg.decision, &cfg.rules, cfg.pr_points);
                    (loss, out, t.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });

    let mut entries = Vec::new();
    let mut rows: Vec<(String, metrics::MetricsReport)> = Vec::new();
    let mut aborted = String::new();
    let mut failure: Option<CliError> = None;
    for (loss, outcome, secs) in outcomes {
        timings.0.insert(format!("train_{loss}"), secs);
        match outcome {
            Ok(o) => {
                write_pr(&c.out, loss.name(), &o.pr_curve)?;
                checkpoint::save(
                    &Model::Predictor(o.predictor.clone()),
                    &c.out.join(format!("checkpoint_predictor_{loss}.json")),
                )?;
                rows.extend(o.results.iter().map(|r| (format!("{loss}/{}", r.rule), r.metrics.clone())));
                entries.push(json!({
                    "loss": loss,
                    "status": "ok",
                    "training_log": o.training_log,
                    "results": o.results,
                }));
            }
            Err(e) => {
                let msg = e.to_string();
                aborted.push_str(&format!("{loss}: aborted: {msg}\n"));
                entries.push(json!({ "loss": loss, "status": "aborted", "error": msg }));
                if failure.is_none() {
                    failure = Some(CliError::from(e));
                }
            }
        }
    }
    let refs: Vec<(String, &metrics::MetricsReport)> = rows.iter().map(|(n, m)| (n.clone(), m)).collect();
    let table = format!("{}{aborted}", format_table(&refs));
    let metrics_json = json!({
        "command": "compare-losses",
        "config": lc.raw,
        "splits": split_sizes(&splits),
        "losses": entries,
    });
    write_json(&c.out.join("metrics.json"), &metrics_json)?;
    write_json(&c.out.join("timings.json"), &timings.0)?;
    fs::write(c.out.join("report.txt"), report_text("compare-losses", &lc.raw, &table)?)?;
    emit(c.format, &table, &metrics_json)?;
    match failure {
        Some(e) => Err(CliError {
            code: e.code,
            message: format!("a sub-training aborted (partial results kept): {}", e.message),
        }),
        None => Ok(EXIT_OK),
    }
}

pub fn cmd_gradcheck(seed: u64, trials: usize, out: Option<&Path>, format: Format) -> CliResult<u8> {
    if trials == 0 {
        return Err(CliError::usage("--trials must be at least 1"));
    }
    let rows = gradcheck::run_all(seed, trials)?;
    let pass = rows.iter().all(|r| r.passed());
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4);
    let mut text = format!("{:<width$} {:>9} {:>14}\n", "check", "instances", "max_rel_error");
    for r in &rows {
        text.push_str(&format!(
            "{:<width$} {:>9} {:>14.3e}{}\n",
            r.name,
            r.instances,
            r.max_rel_error,
            if r.passed() { "" } else { "  FAIL" }
        ));
    }
    text.push_str(if pass { "PASS\n" } else { "FAIL\n" });
    let report = json!({
        "command": "gradcheck",
        "seed": seed,
        "trials": trials,
        "tolerance": gradcheck::GRADCHECK_TOL,
        "rows": rows,
        "pass": pass,
    });
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_json(&out.join("metrics.json"), &report)?;
        fs::write(out.join("report.txt"), &text)?;
    }
    emit(format, &text, &report)?;
    Ok(if pass { EXIT_OK } else { EXIT_VERIFY })
}

pub fn cmd_bayes_check(
    config: Option<&Path>,
    independent: Option<Vec<f64>>,
    tol: Option<f64>,
    out: Option<&Path>,
    format: Format,
) -> CliResult<u8> {
    let cfg = match (config, independent) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
            parse_config::<BayesCheckConfig>(&text, &path.display().to_string())?
        }
        (None, Some(p)) => BayesCheckConfig {
            dist: DistSpec::Independent(p),
            tol: default_bayes_tol(),
        },
        (None, None) => return Err(CliError::usage("give --config or --independent")),
    };
    let tol = tol.unwrap_or(cfg.tol);
    if !(tol > 0.0) {
        return Err(CliError::usage("--tol must be positive"));
    }
    let dist = cfg.dist.build()?;
    let report: TheoremReport = consistency::verify_theorem1(&dist, tol)?;
    let text = report.to_text();
    let report_json = json!({
        "command": "bayes-check",
        "dist": cfg.dist,
        "report": report,
    });
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_json(&out.join("metrics.json"), &report_json)?;
        fs::write(out.join("report.txt"), &text)?;
    }
    emit(format, &text, &report_json)?;
    Ok(if report.pass { EXIT_OK } else { EXIT_VERIFY })
}

pub fn cmd_gen_data(c: &Common, data_format: DataFormat) -> CliResult<u8> {
    let lc = load_config(&c.config, c.seed)?;
    let cfg = &lc.config;
    if !matches!(cfg.data, DataSource::Synthetic(_)) {
        return Err(CliError::usage("field `data`: gen-data needs a synthetic source"));
    }
    // Data files must not hold empty or full label sets, so those draws are
    // dropped.
    let drawn = load_source(&cfg.data, &lc.base_dir, sub_seed(cfg.seed, Stream::Data))?;
    let ds = drawn.trainable();
    if ds.is_empty() {
        return Err(CliError::usage("every drawn sample has an empty or full label set"));
    }
    fs::create_dir_all(&c.out)?;
    let ext = match data_format {
        DataFormat::Csv => "csv",
        DataFormat::Jsonl => "jsonl",
    };
    let path = c.out.join(format!("data.{ext}"));
    data::write_dataset(&ds, &path, data_format)?;

    let k = ds.vocab_size;
    let mut freq = vec![0usize; k];
    let mut total = 0usize;
    for s in &ds.samples {
        total += s.labels.len();
        for l in s.labels.iter() {
            freq[l] += 1;
        }
    }
    let summary = json!({
        "command": "gen-data",
        "config": lc.raw,
        "file": path.file_name().map(|f| f.to_string_lossy().into_owned()),
        "n_samples": ds.len(),
        "vocab_size": k,
        "feature_dim": ds.feature_dim,
        "label_frequency": freq.iter().map(|&f| f as f64 / ds.len() as f64).collect::<Vec<_>>(),
        "mean_labels": total as f64 / ds.len() as f64,
        "dropped": drawn.len() - ds.len(),
    });
    write_json(&c.out.join("metrics.json"), &summary)?;
    let text = format!(
        "wrote {} samples (K={}, d={}) to {}\n",
        ds.len(),
        k,
        ds.feature_dim,
        path.display()
    );
    fs::write(c.out.join("report.txt"), report_text("gen-data", &lc.raw, &text)?)?;
    emit(c.format, &text, &summary)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_loss_names_field() {
        let text = r#"{"seed": 1, "data": {"synthetic": {"dist": {"independent": [0.5, 0.5]}, "n_samples": 10, "feature_dim": 2}}, "train": {"loss": "focal"}}"#;
        let err = parse_config::<ExperimentConfig>(text, "cfg.json").unwrap_err();
        assert_eq!(err.code, EXIT_USAGE);
        assert!(err.message.contains("train.loss"), "{}", err.message);
    }

    #[test]
    fn seed_is_mandatory() {
        let text = r#"{"data": {"synthetic": {"dist": {"independent": [0.5, 0.5]}, "n_samples": 10, "feature_dim": 2}}}"#;
        let err = parse_config::<ExperimentConfig>(text, "cfg.json").unwrap_err();
        assert!(err.message.contains("seed"), "{}", err.message);
    }

    #[test]
    fn dist_specs() {
        let d: DistSpec = serde_json::from_str(r#"{"joint": {"vocab_size": 3, "subsets": [[[1, 2], 0.6], [[3], 0.4]]}}"#).unwrap();
        let m = d.build().unwrap().marginals();
        assert!((m[0] - 0.6).abs() < 1e-15 && (m[2] - 0.4).abs() < 1e-15);
        let big = DistSpec::Joint {
            vocab_size: 13,
            subsets: vec![(vec![1], 1.0)],
        };
        assert!(matches!(big.build(), Err(Error::EnumerationCap { .. })));
    }

    #[test]
    fn numeric_abort_maps_to_exit_2() {
        let e: CliError = Error::NonFiniteLoss {
            epoch: 1,
            batch: 1,
            loss: f64::NAN,
        }
        .into();
        assert_eq!(e.code, EXIT_NUMERIC);
    }
}
