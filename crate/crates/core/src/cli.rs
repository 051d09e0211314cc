//! Experiment runner behind the `weightforge` binary.
//!
//! Every command reads one JSON [`ExperimentConfig`], runs once per seed and
//! writes seed-named artifacts into the output directory. Reports and tables
//! are pure functions of (config, seed); wall-clock data only goes into
//! `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{
    load_cifar_batch, load_csv, load_token_corpus, make_blobs, make_toy_sentiment, split, Dataset, SplitSpec, Splits,
    TabularDataset,
};
use crate::error::{Error, Result};
use crate::finetune::{
    evaluate, extract_theta, finetune, DeltaSpec, FinetuneConfig, FinetuneOutcome, LayerSelector, PipelineReport,
};
use crate::metrics::{
    summarize_reports, wilcoxon_signed_rank, ClassificationReport, ReportSummary, WilcoxonOutcome, DEFAULT_ALPHA,
};
use crate::model::{load_state, save_state, sgd_train, Architecture, NetworkState, TrainConfig, TrainOutcome};
use crate::optim::{Algorithm, GaConfig, PsoConfig, RunBudget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
    /// One or more CIFAR-10 binary batches, concatenated in order.
    Cifar {
        paths: Vec<PathBuf>,
    },
    /// Token corpus: one `label id id ...` line per sample.
    Tokens {
        path: PathBuf,
    },
    ToySentiment {
        vocab_size: usize,
        samples: usize,
        max_len: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    Ga,
    Pso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Alpha,
    Beta,
    Gamma,
}

impl Preset {
    pub fn budget(self) -> RunBudget {
        match self {
            Preset::Alpha => RunBudget::ALPHA,
            Preset::Beta => RunBudget::BETA,
            Preset::Gamma => RunBudget::GAMMA,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Alpha => "alpha",
            Preset::Beta => "beta",
            Preset::Gamma => "gamma",
        }
    }
}

/// A preset name or explicit `{"agents": m, "iterations": t}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BudgetSpec {
    Preset(Preset),
    Explicit(RunBudget),
}

impl BudgetSpec {
    pub fn budget(self) -> RunBudget {
        match self {
            BudgetSpec::Preset(p) => p.budget(),
            BudgetSpec::Explicit(b) => b,
        }
    }

    pub fn label(self) -> String {
        match self {
            BudgetSpec::Preset(p) => p.name().to_string(),
            BudgetSpec::Explicit(b) => match b.preset_name() {
                Some(name) => name.to_string(),
                None => format!("m{}t{}", b.agents, b.iterations),
            },
        }
    }
}

impl Default for BudgetSpec {
    fn default() -> Self {
        BudgetSpec::Preset(Preset::Alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    pub model: Architecture,
    pub train: TrainConfig,
    #[serde(default = "default_algorithm")]
    pub algorithm: AlgorithmName,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default)]
    pub pso: PsoConfig,
    #[serde(default)]
    pub budget: BudgetSpec,
    #[serde(default)]
    pub delta: DeltaSpec,
    #[serde(default)]
    pub selector: LayerSelector,
    #[serde(default = "yes")]
    pub anchor: bool,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_split() -> SplitSpec {
    SplitSpec::new(0.6, 0.2, 0.2, 0)
}

fn default_algorithm() -> AlgorithmName {
    AlgorithmName::Ga
}

fn yes() -> bool {
    true
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.algorithm().validate()?;
        self.budget.budget().validate()?;
        self.delta.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        Ok(())
    }

    pub fn algorithm(&self) -> Algorithm {
        match self.algorithm {
            AlgorithmName::Ga => Algorithm::Ga(self.ga.clone()),
            AlgorithmName::Pso => Algorithm::Pso(self.pso.clone()),
        }
    }

    pub fn finetune_config(&self, seed: u64) -> FinetuneConfig {
        FinetuneConfig {
            algorithm: self.algorithm(),
            budget: self.budget.budget(),
            delta: self.delta.clone(),
            selector: self.selector.clone(),
            seed,
            anchor: self.anchor,
        }
    }

    pub fn model_name(&self) -> &'static str {
        match self.model {
            Architecture::Mlp(_) => "MLP",
            Architecture::Lstm(_) => "LSTM",
        }
    }

    /// Table label for the fine-tuned network, e.g. `alpha-GA-MLP`.
    pub fn tuned_name(&self) -> String {
        format!("{}-{}-{}", self.budget.label(), self.algorithm().short_name(), self.model_name())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSpec::Csv { path, .. } | DatasetSpec::Tokens { path } => fix(path),
            DatasetSpec::Cifar { paths } => paths.iter_mut().for_each(fix),
            DatasetSpec::Blobs { .. } | DatasetSpec::ToySentiment { .. } => {}
        }
    }
}

/// Reads a config; relative dataset paths are taken relative to the config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    Ok(match spec {
        DatasetSpec::Blobs {
            classes,
            per_class,
            dim,
            spread,
            seed,
        } => make_blobs(*classes, *per_class, *dim, *spread, *seed)?.into(),
        DatasetSpec::Csv { path, label_column } => load_csv(path, label_column)?.into(),
        DatasetSpec::Cifar { paths } => {
            if paths.is_empty() {
                return Err(Error::Config("no CIFAR batch files listed".into()));
            }
            let mut features = Vec::new();
            let mut labels = Vec::new();
            for p in paths {
                let batch = load_cifar_batch(p)?;
                features.extend_from_slice(batch.features());
                labels.extend_from_slice(batch.labels());
            }
            TabularDataset::new(features, crate::data::CIFAR_IMAGE_BYTES, labels, crate::data::CIFAR_CLASSES)?.into()
        }
        DatasetSpec::Tokens { path } => load_token_corpus(path)?.into(),
        DatasetSpec::ToySentiment {
            vocab_size,
            samples,
            max_len,
            seed,
        } => make_toy_sentiment(*vocab_size, *samples, *max_len, *seed)?.into(),
    })
}

pub fn prepare_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    split(&load_dataset(&cfg.dataset)?, &cfg.split)
}

/// Accepts `3`, `0,2,5` or the half-open range `0..10`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = |t: &str| Error::Config(format!("cannot parse seed list {t:?}"));
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad(text))?;
        let b: u64 = b.trim().parse().map_err(|_| bad(text))?;
        if b <= a {
            return Err(Error::Config(format!("empty seed range {text:?}")));
        }
        return Ok((a..b).collect());
    }
    let seeds = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|_| bad(text)))
        .collect::<Result<Vec<u64>>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("cannot parse {what} {s:?}"))))
        .collect()
}

#[derive(Debug, Parser)]
#[command(name = "weightforge", version, about = "Gradient pre-training plus GA/PSO fine-tuning of a network layer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network per seed with minibatch SGD.
    Pretrain(RunArgs),
    /// Fine-tune the selected layer of each seed's network and report test metrics.
    Finetune(FinetuneArgs),
    /// Score a saved network on the configured test split.
    Evaluate(EvaluateArgs),
    /// Wilcoxon comparison of two run tables.
    Compare(CompareArgs),
    /// Fine-tune over a grid of deltas and budgets.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// `3`, `0,2,5` or `0..10`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Do not seed an agent at the pre-trained weights.
    #[arg(long)]
    pub no_anchor: bool,
    #[arg(long, value_enum)]
    pub algorithm: Option<AlgorithmName>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub delta: Option<f64>,
}

impl RunArgs {
    /// The config file with command-line overrides applied.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = load_config(&self.config)?;
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        if let Some(out) = &self.out {
            cfg.out.clone_from(out);
        }
        if self.no_anchor {
            cfg.anchor = false;
        }
        if let Some(a) = self.algorithm {
            cfg.algorithm = a;
        }
        if let Some(p) = self.preset {
            cfg.budget = BudgetSpec::Preset(p);
        }
        if let Some(d) = self.delta {
            cfg.delta = DeltaSpec::Scalar(d);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Pre-trained weights: a `.wfnn` file used for every seed, or a directory
    /// holding `weights_seed{N}.wfnn`. Without it each seed is pre-trained first.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// First run table (`runs_*.csv`).
    pub a: PathBuf,
    /// Second run table.
    pub b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Directory for `comparison.md` / `comparison.csv`; stdout only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated deltas.
    #[arg(long, default_value = "0.0001,0.001")]
    pub deltas: String,
    /// Comma-separated presets.
    #[arg(long, default_value = "alpha,beta,gamma")]
    pub presets: String,
}

/// One row of `runs_pre.csv` / `runs_post.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub model: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RunRow {
    fn new(seed: u64, model: &str, r: &ClassificationReport) -> Self {
        Self {
            seed,
            model: model.to_string(),
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        }
    }

    fn report(&self) -> ClassificationReport {
        ClassificationReport {
            accuracy: self.accuracy,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
        }
    }
}

pub fn write_runs(path: &Path, rows: &[RunRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_file_error(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_file_error(path, e))?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<RunRow>, _>>()?;
    Ok(rows)
}

fn csv_file_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::file(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub pretrain_secs: f64,
    pub finetune_secs: f64,
}

/// Bookkeeping for a command run: what was asked, what was written, and when.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
    pub failures: Vec<SeedFailure>,
    pub timings: Vec<SeedTiming>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Collects output files and per-seed outcomes while a command runs.
struct Recorder {
    out: PathBuf,
    command: &'static str,
    started: f64,
    files: Vec<String>,
    failures: Vec<SeedFailure>,
    timings: Vec<SeedTiming>,
}

impl Recorder {
    fn new(out: &Path, command: &'static str) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
        Ok(Self {
            out: out.to_path_buf(),
            command,
            started: unix_now(),
            files: Vec::new(),
            failures: Vec::new(),
            timings: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.out.join(name)
    }

    fn fail(&mut self, seed: u64, err: &Error) {
        eprintln!("seed {seed} failed: {err}");
        self.failures.push(SeedFailure {
            seed,
            error: err.to_string(),
        });
    }

    fn finish(mut self, cfg: &ExperimentConfig) -> Result<RunOutcome> {
        let manifest_path = self.out.join("manifest.json");
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            config: cfg.clone(),
            files: std::mem::take(&mut self.files),
            failures: self.failures.clone(),
            timings: std::mem::take(&mut self.timings),
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        write_json(&manifest_path, &manifest)?;
        Ok(RunOutcome {
            out: self.out,
            manifest,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub manifest: RunManifest,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.manifest.failures.is_empty()
    }
}

fn pretrain_seed(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> Result<TrainOutcome> {
    let train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    sgd_train(cfg.model, &splits.train, Some(&splits.val), &train)
}

pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let splits = prepare_splits(cfg)?;
    let mut rec = Recorder::new(&cfg.out, "pretrain")?;
    for &seed in &cfg.seeds {
        let started = Instant::now();
        let result = pretrain_seed(cfg, &splits, seed).and_then(|t| {
            save_state(&t.state, rec.path(&format!("weights_seed{seed}.wfnn")))?;
            write_json(&rec.path(&format!("weights_seed{seed}.json")), &t.state)?;
            write_json(&rec.path(&format!("trace_seed{seed}.json")), &t.trace)
        });
        match result {
            Ok(()) => rec.timings.push(SeedTiming {
                seed,
                pretrain_secs: started.elapsed().as_secs_f64(),
                finetune_secs: 0.0,
            }),
            Err(e) => rec.fail(seed, &e),
        }
    }
    rec.finish(cfg)
}

/// Pre- vs post-fine-tuning summary over all completed seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub baseline: String,
    pub tuned: String,
    pub seeds: Vec<u64>,
    pub pre: ReportSummary,
    pub post: ReportSummary,
    /// One test per metric, in accuracy/precision/recall/f1 order.
    pub wilcoxon: Vec<WilcoxonOutcome>,
}

fn aggregate(cfg: &ExperimentConfig, reports: &[PipelineReport]) -> Result<Aggregate> {
    let pre: Vec<ClassificationReport> = reports.iter().map(|r| r.pre_test).collect();
    let post: Vec<ClassificationReport> = reports.iter().map(|r| r.post_test).collect();
    let wilcoxon = (0..4)
        .map(|k| {
            let a: Vec<f64> = pre.iter().map(|r| r.values()[k]).collect();
            let b: Vec<f64> = post.iter().map(|r| r.values()[k]).collect();
            wilcoxon_signed_rank(&a, &b, DEFAULT_ALPHA)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Aggregate {
        baseline: cfg.model_name().to_string(),
        tuned: cfg.tuned_name(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        pre: summarize_reports(&pre)?,
        post: summarize_reports(&post)?,
        wilcoxon,
    })
}

fn base_state(cfg: &ExperimentConfig, splits: &Splits, weights: Option<&Path>, seed: u64) -> Result<(NetworkState, Option<TrainOutcome>)> {
    match weights {
        Some(p) if p.is_dir() => Ok((load_state(p.join(format!("weights_seed{seed}.wfnn")))?, None)),
        Some(p) => Ok((load_state(p)?, None)),
        None => {
            let t = pretrain_seed(cfg, splits, seed)?;
            Ok((t.state.clone(), Some(t)))
        }
    }
}

/// `tensor,row,col,pre,post` for every searched weight.
fn weight_dump(out: &FinetuneOutcome, selector: &LayerSelector) -> Result<String> {
    let pre = extract_theta(&out.pre_state, selector)?;
    let post = extract_theta(&out.post_state, selector)?;
    let mut text = String::from("tensor,row,col,pre,post\n");
    for e in &pre.layout {
        for i in 0..e.rows * e.cols {
            let k = e.offset + i;
            text.push_str(&format!(
                "{},{},{},{:e},{:e}\n",
                e.tensor,
                i / e.cols,
                i % e.cols,
                pre.values[k],
                post.values[k]
            ));
        }
    }
    Ok(text)
}

fn finetune_seed(
    cfg: &ExperimentConfig,
    splits: &Splits,
    base: &NetworkState,
    seed: u64,
) -> Result<FinetuneOutcome> {
    finetune(base, splits, &cfg.finetune_config(seed))
}

pub fn cmd_finetune(cfg: &ExperimentConfig, weights: Option<&Path>) -> Result<RunOutcome> {
    let splits = prepare_splits(cfg)?;
    let mut rec = Recorder::new(&cfg.out, "finetune")?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let started = Instant::now();
        let result = (|| -> Result<PipelineReport> {
            let (base, trained) = base_state(cfg, &splits, weights, seed)?;
            let pretrain_secs = started.elapsed().as_secs_f64();
            let mut outcome = finetune_seed(cfg, &splits, &base, seed)?;
            if let Some(t) = trained {
                save_state(&t.state, rec.path(&format!("weights_seed{seed}.wfnn")))?;
                outcome.report.pretrain_trace = Some(t.trace);
            }
            save_state(&outcome.post_state, rec.path(&format!("weights_post_seed{seed}.wfnn")))?;
            write_text(
                &rec.path(&format!("weights_dump_seed{seed}.csv")),
                &weight_dump(&outcome, &cfg.selector)?,
            )?;
            write_json(&rec.path(&format!("report_seed{seed}.json")), &outcome.report)?;
            rec.timings.push(SeedTiming {
                seed,
                pretrain_secs,
                finetune_secs: outcome.report.timings.finetune_secs,
            });
            Ok(outcome.report)
        })();
        match result {
            Ok(r) => reports.push(r),
            Err(e) => rec.fail(seed, &e),
        }
    }
    if !reports.is_empty() {
        write_report_tables(&mut rec, cfg, &reports)?;
    }
    rec.finish(cfg)
}

fn write_report_tables(rec: &mut Recorder, cfg: &ExperimentConfig, reports: &[PipelineReport]) -> Result<()> {
    let pre: Vec<RunRow> = reports.iter().map(|r| RunRow::new(r.seed, cfg.model_name(), &r.pre_test)).collect();
    let tuned = cfg.tuned_name();
    let post: Vec<RunRow> = reports.iter().map(|r| RunRow::new(r.seed, &tuned, &r.post_test)).collect();
    write_runs(&rec.path("runs_pre.csv"), &pre)?;
    write_runs(&rec.path("runs_post.csv"), &post)?;
    write_json(&rec.path("aggregate.json"), &aggregate(cfg, reports)?)
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, weights: &Path) -> Result<ClassificationReport> {
    let state = load_state(weights)?;
    let splits = prepare_splits(cfg)?;
    evaluate(&state, &splits.test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a_model: String,
    pub b_model: String,
    pub a: ReportSummary,
    pub b: ReportSummary,
    pub tests: Vec<WilcoxonOutcome>,
    pub alpha: f64,
}

const TABLE_HEADER: [&str; 5] = ["Model", "Accuracy", "Precision", "Recall", "F1-Score"];

fn percent(s: &crate::metrics::Summary) -> String {
    format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std)
}

impl Comparison {
    /// Results table in percent, with the paired test underneath.
    pub fn to_markdown(&self) -> String {
        let mut out = format!("| {} |\n|{}\n", TABLE_HEADER.join(" | "), " --- |".repeat(TABLE_HEADER.len()));
        for (name, s) in [(&self.a_model, &self.a), (&self.b_model, &self.b)] {
            let cells: Vec<String> = s.values().iter().map(percent).collect();
            out.push_str(&format!("| {} | {} |\n", name, cells.join(" | ")));
        }
        let p: Vec<String> = self.tests.iter().map(|t| format!("{:.4}", t.p_value)).collect();
        out.push_str(&format!("| p-value | {} |\n", p.join(" | ")));
        let sig: Vec<&str> = self.tests.iter().map(|t| if t.significant { "yes" } else { "no" }).collect();
        out.push_str(&format!("| Significant (alpha={}) | {} |\n", self.alpha, sig.join(" | ")));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,a_model,a_mean,a_std,b_model,b_mean,b_std,statistic,p_value,significant\n");
        let (a, b) = (self.a.values(), self.b.values());
        for (k, name) in ClassificationReport::METRIC_NAMES.iter().enumerate() {
            let t = &self.tests[k];
            out.push_str(&format!(
                "{name},{},{},{},{},{},{},{},{},{}\n",
                self.a_model, a[k].mean, a[k].std, self.b_model, b[k].mean, b[k].std, t.statistic, t.p_value, t.significant
            ));
        }
        out
    }
}

/// Pairs runs by seed and tests every metric.
pub fn compare_runs(a: &[RunRow], b: &[RunRow], alpha: f64) -> Result<Comparison> {
    if a.len() != b.len() {
        return Err(Error::Pairing(format!("{} runs cannot be paired with {} runs", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Pairing("no runs to compare".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by_key(|r| r.seed);
    b.sort_by_key(|r| r.seed);
    if a.iter().zip(&b).any(|(x, y)| x.seed != y.seed) {
        return Err(Error::Pairing("the two run tables list different seeds".into()));
    }
    let ra: Vec<ClassificationReport> = a.iter().map(RunRow::report).collect();
    let rb: Vec<ClassificationReport> = b.iter().map(RunRow::report).collect();
    let tests = (0..4)
        .map(|k| {
            let x: Vec<f64> = ra.iter().map(|r| r.values()[k]).collect();
            let y: Vec<f64> = rb.iter().map(|r| r.values()[k]).collect();
            wilcoxon_signed_rank(&x, &y, alpha)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison {
        a_model: a[0].model.clone(),
        b_model: b[0].model.clone(),
        a: summarize_reports(&ra)?,
        b: summarize_reports(&rb)?,
        tests,
        alpha,
    })
}

pub fn cmd_compare(a: &Path, b: &Path, alpha: f64) -> Result<Comparison> {
    compare_runs(&read_runs(a)?, &read_runs(b)?, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub delta: f64,
    pub budget: String,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub deltas: Vec<f64>,
    pub budgets: Vec<String>,
    /// Row-major: delta outer, budget inner.
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    /// Post-tuning test accuracy (%) with deltas as rows and budgets as columns.
    pub fn to_markdown(&self) -> String {
        let mut out = format!("| Delta | {} |\n|{}\n", self.budgets.join(" | "), " --- |".repeat(self.budgets.len() + 1));
        for (i, d) in self.deltas.iter().enumerate() {
            let row: Vec<String> = self.cells[i * self.budgets.len()..(i + 1) * self.budgets.len()]
                .iter()
                .map(|c| percent(&c.aggregate.post.accuracy))
                .collect();
            out.push_str(&format!("| {d} | {} |\n", row.join(" | ")));
        }
        out
    }
}

/// Pre-trains each seed once, then fine-tunes it in every (delta, budget) cell.
pub fn cmd_sweep(cfg: &ExperimentConfig, deltas: &[f64], budgets: &[BudgetSpec]) -> Result<(SweepGrid, RunOutcome)> {
    if deltas.is_empty() {
        return Err(Error::Config("sweep needs at least one delta".into()));
    }
    if budgets.is_empty() {
        return Err(Error::Config("sweep needs at least one budget".into()));
    }
    for &d in deltas {
        DeltaSpec::Scalar(d).validate()?;
    }
    let splits = prepare_splits(cfg)?;
    let mut rec = Recorder::new(&cfg.out, "sweep")?;
    let mut bases = Vec::new();
    for &seed in &cfg.seeds {
        match pretrain_seed(cfg, &splits, seed) {
            Ok(t) => bases.push((seed, t.state)),
            Err(e) => rec.fail(seed, &e),
        }
    }
    let mut cells = Vec::new();
    let mut rows: Vec<String> = vec!["delta,budget,seed,model,accuracy,precision,recall,f1".into()];
    for &delta in deltas {
        for &budget in budgets {
            let cell_cfg = ExperimentConfig {
                delta: DeltaSpec::Scalar(delta),
                budget,
                ..cfg.clone()
            };
            let mut reports = Vec::new();
            for (seed, base) in &bases {
                match finetune_seed(&cell_cfg, &splits, base, *seed) {
                    Ok(o) => reports.push(o.report),
                    Err(e) => rec.fail(*seed, &e),
                }
            }
            if reports.is_empty() {
                continue;
            }
            for r in &reports {
                let p = &r.post_test;
                rows.push(format!(
                    "{delta},{},{},{},{},{},{},{}",
                    budget.label(),
                    r.seed,
                    cell_cfg.tuned_name(),
                    p.accuracy,
                    p.precision,
                    p.recall,
                    p.f1
                ));
            }
            cells.push(SweepCell {
                delta,
                budget: budget.label(),
                aggregate: aggregate(&cell_cfg, &reports)?,
            });
        }
    }
    let grid = SweepGrid {
        deltas: deltas.to_vec(),
        budgets: budgets.iter().map(|b| b.label()).collect(),
        cells,
    };
    write_json(&rec.path("sweep.json"), &grid)?;
    rows.push(String::new());
    write_text(&rec.path("sweep_runs.csv"), &rows.join("\n"))?;
    if grid.cells.len() == deltas.len() * budgets.len() {
        write_text(&rec.path("sweep.md"), &grid.to_markdown())?;
    }
    let outcome = rec.finish(cfg)?;
    Ok((grid, outcome))
}

fn exit_code(outcome: &RunOutcome) -> i32 {
    if outcome.succeeded() {
        println!("wrote {}", outcome.out.join("manifest.json").display());
        0
    } else {
        let seeds: Vec<String> = outcome.manifest.failures.iter().map(|f| f.seed.to_string()).collect();
        eprintln!("failed seeds: {}", seeds.join(", "));
        1
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Pretrain(args) => Ok(exit_code(&cmd_pretrain(&args.resolve()?)?)),
        Command::Finetune(args) => {
            let cfg = args.run.resolve()?;
            let outcome = cmd_finetune(&cfg, args.weights.as_deref())?;
            if let Ok(text) = fs::read_to_string(outcome.out.join("aggregate.json")) {
                if let Ok(agg) = serde_json::from_str::<Aggregate>(&text) {
                    print!("{}", aggregate_table(&agg));
                }
            }
            Ok(exit_code(&outcome))
        }
        Command::Evaluate(args) => {
            let cfg = load_config(&args.config)?;
            let report = cmd_evaluate(&cfg, &args.weights)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        Command::Compare(args) => {
            let cmp = cmd_compare(&args.a, &args.b, args.alpha)?;
            let md = cmp.to_markdown();
            print!("{md}");
            if let Some(out) = &args.out {
                fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
                write_text(&out.join("comparison.md"), &md)?;
                write_text(&out.join("comparison.csv"), &cmp.to_csv())?;
            }
            Ok(0)
        }
        Command::Sweep(args) => {
            let cfg = args.run.resolve()?;
            let deltas: Vec<f64> = parse_list(&args.deltas, "delta")?;
            let presets: Vec<Preset> = parse_list::<String>(&args.presets, "preset")?
                .iter()
                .map(|s| Preset::from_str(s, true).map_err(|_| Error::Config(format!("unknown preset {s:?}"))))
                .collect::<Result<_>>()?;
            let budgets: Vec<BudgetSpec> = presets.into_iter().map(BudgetSpec::Preset).collect();
            let (grid, outcome) = cmd_sweep(&cfg, &deltas, &budgets)?;
            print!("{}", grid.to_markdown());
            Ok(exit_code(&outcome))
        }
    }
}

fn aggregate_table(agg: &Aggregate) -> String {
    Comparison {
        a_model: agg.baseline.clone(),
        b_model: agg.tuned.clone(),
        a: agg.pre,
        b: agg.post,
        tests: agg.wilcoxon.clone(),
        alpha: DEFAULT_ALPHA,
    }
    .to_markdown()
}
