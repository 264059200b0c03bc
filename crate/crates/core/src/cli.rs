//! Command-line interface.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage or data error, 3 numeric
//! abort during training.

use std::collections::BTreeMap;
use std::fmt::{Display, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::synth::FACTOR_NAMES;
use crate::data::{make_anomaly_split, FactorDataset, LabelPolicy, LabeledDataset, MnistFiles, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_runs, anomaly_scores, evaluate_anomaly, summaries_table, RunReport,
};
use crate::experiment::{
    class_grids, default_epochs, dense_spec, generate_per_class, image_side, run_anomaly,
    self_consistency, train_masked, DisentangleSetup, LatentLayout,
};
use crate::gradcheck::{run_cases, run_gradcheck, GradCheckOptions};
use crate::model::{checkpoint, SsVaeModel, Variant};
use crate::tensor::OpKind;
use crate::training::{evaluate_classification, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "ssvae", version, about = "Semi-supervised VAE experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its checkpoint and loss log.
    Train(TrainArgs),
    /// Classification accuracy and log loss, from a checkpoint or fresh runs.
    Eval(EvalArgs),
    /// Anomaly-detection AUC with one class held out of training.
    Anomaly(AnomalyArgs),
    /// Anomaly AUC as a function of the labelled fraction.
    Labelsweep(SweepArgs),
    /// Class-conditioned image grids from a checkpoint.
    Generate(GenerateArgs),
    /// betaVAE scores on the synthetic factor images.
    Disentangle(DisentangleArgs),
    /// Finite-difference check of every backward rule.
    Gradcheck(GradcheckArgs),
}

/// Number of labels to keep: a count or `all`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelCount {
    All,
    Count(usize),
}

impl LabelCount {
    fn get(self) -> Option<usize> {
        match self {
            LabelCount::All => None,
            LabelCount::Count(n) => Some(n),
        }
    }
}

impl std::str::FromStr for LabelCount {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(LabelCount::All);
        }
        s.parse()
            .map(LabelCount::Count)
            .map_err(|_| format!("expected a label count or `all`, got {s:?}"))
    }
}

impl Display for LabelCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelCount::All => f.write_str("all"),
            LabelCount::Count(n) => write!(f, "{n}"),
        }
    }
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_policy(s: &str) -> std::result::Result<LabelPolicy, String> {
    match s {
        "balanced" => Ok(LabelPolicy::Balanced),
        "natural" => Ok(LabelPolicy::Natural),
        _ => Err(format!("unknown policy {s:?} (expected balanced or natural)")),
    }
}

fn policy_name(p: LabelPolicy) -> &'static str {
    match p {
        LabelPolicy::Balanced => "balanced",
        LabelPolicy::Natural => "natural",
    }
}

/// Hyperparameters shared by every training command. Flags override the
/// `--config` file, which overrides built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    /// Plain-text `key=value` file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta_norm: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Labelled/unlabelled batch composition.
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<LabelPolicy>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Condition the decoder on true labels where known.
    #[arg(long)]
    pub teacher_forcing: Option<bool>,
    /// Hidden layer width (all layers).
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataFlags {
    /// Directory with the MNIST-layout IDX files; defaults to $SSVAE_DATA_DIR.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Labels kept in the training set (`all` or a count).
    #[arg(long)]
    pub labels: Option<LabelCount>,
    /// Seed of the labelled subset; defaults to the training seed.
    #[arg(long)]
    pub label_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataFlags,
    /// Checkpoint path.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Loss log CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataFlags,
    /// Evaluate this checkpoint instead of training.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Per-run CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnomalyArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataFlags,
    /// Class held out of training.
    #[arg(long)]
    pub class: Option<usize>,
    /// Score this checkpoint instead of training.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub class: Option<usize>,
    /// Label percentages, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Summary CSV path (one row per fraction).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Images per grid side.
    #[arg(long, default_value_t = 5)]
    pub grid: usize,
    /// Latent codes from a `[-2,2]²` grid or standard normal draws.
    #[arg(long)]
    pub layout: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "generated")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DisentangleArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    /// Label counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<usize>>,
    /// Train on the labelled images only.
    #[arg(long)]
    pub labeled_only: bool,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Factor that labels the class head: shape, x_pos, y_pos or scale.
    #[arg(long)]
    pub factor: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Analytic gradients in double precision; tolerance 1e-6.
    #[arg(long)]
    pub double: bool,
    /// Corrupt the backward rule of this operation.
    #[arg(long)]
    pub inject_fault: Option<OpKind>,
    /// Run only these cases.
    #[arg(long, value_delimiter = ',')]
    pub only: Option<Vec<String>>,
}

/// Keys a config file may set besides the training hyperparameters.
const EXTRA_KEYS: &[&str] = &["dataset", "labels", "label_seed", "width", "repeats", "class"];

struct FileConfig {
    train: Vec<(String, String)>,
    extra: BTreeMap<String, String>,
}

impl FileConfig {
    fn read(path: Option<&Path>) -> Result<Self> {
        let mut out = FileConfig {
            train: Vec::new(),
            extra: BTreeMap::new(),
        };
        let Some(path) = path else { return Ok(out) };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Argument(format!("{} line {}: expected key=value", path.display(), n + 1))
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if EXTRA_KEYS.contains(&k.as_str()) {
                out.extra.insert(k, v);
            } else {
                out.train.push((k, v));
            }
        }
        Ok(out)
    }

    fn extra<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.extra
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Argument(format!("config {key}: cannot parse {v:?}")))
            })
            .transpose()
    }
}

/// Settings after merging defaults, the config file and flags.
struct Resolved {
    cfg: TrainConfig,
    width: Option<usize>,
    file: FileConfig,
}

fn resolve(flags: &TrainFlags, base: TrainConfig) -> Result<Resolved> {
    let file = FileConfig::read(flags.config.as_deref())?;
    let mut cfg = base;
    let mut file_cfg = TrainConfig::default();
    for (k, v) in &file.train {
        file_cfg.set(k, v)?;
    }
    let file_variant = file.train.iter().any(|(k, _)| k == "variant").then_some(file_cfg.variant);
    cfg.variant = flags.variant.or(file_variant).unwrap_or(cfg.variant);
    if cfg.epochs == 0 {
        cfg.epochs = default_epochs(cfg.variant);
    }
    for (k, v) in &file.train {
        cfg.set(k, v)?;
    }
    cfg.variant = flags.variant.or(file_variant).unwrap_or(cfg.variant);
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = flags.alpha {
        cfg.alpha_weight = v;
    }
    if let Some(v) = flags.beta_norm {
        cfg.beta_norm = v;
    }
    if let Some(v) = flags.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.policy {
        cfg.policy = v;
    }
    if let Some(v) = flags.clip_norm {
        cfg.clip_norm = v;
    }
    if let Some(v) = flags.teacher_forcing {
        cfg.teacher_forcing = v;
    }
    cfg.validate()?;
    let width = match flags.width {
        Some(w) => Some(w),
        None => file.extra("width")?,
    };
    if width == Some(0) {
        return Err(Error::Argument("width must be positive".into()));
    }
    Ok(Resolved { cfg, width, file })
}

/// Default training settings for the MNIST commands; epochs follow the variant.
fn mnist_base() -> TrainConfig {
    TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    }
}

/// Rebuilds a command line that reproduces a run.
struct Echo(String);

impl Echo {
    fn new(command: &str) -> Self {
        Echo(format!("# ssvae {command}"))
    }

    fn flag(mut self, name: &str, value: impl Display) -> Self {
        let _ = write!(self.0, " --{name} {value}");
        self
    }

    fn opt(self, name: &str, value: Option<impl Display>) -> Self {
        match value {
            Some(v) => self.flag(name, v),
            None => self,
        }
    }

    fn switch(mut self, name: &str, on: bool) -> Self {
        if on {
            let _ = write!(self.0, " --{name}");
        }
        self
    }

    fn train(self, cfg: &TrainConfig, width: Option<usize>) -> Self {
        self.flag("variant", cfg.variant)
            .flag("epochs", cfg.epochs)
            .flag("lr", cfg.learning_rate)
            .flag("alpha", cfg.alpha_weight)
            .flag("beta-norm", cfg.beta_norm)
            .flag("batch", cfg.batch_size)
            .flag("seed", cfg.seed)
            .flag("policy", policy_name(cfg.policy))
            .flag("clip-norm", cfg.clip_norm)
            .flag("teacher-forcing", cfg.teacher_forcing)
            .opt("width", width)
    }

    fn print(&self) {
        println!("{}", self.0);
    }
}

struct Mnist {
    dir: Option<PathBuf>,
    train: LabeledDataset,
    test: LabeledDataset,
}

fn load_mnist(flags: &DataFlags, file: &FileConfig) -> Result<Mnist> {
    let dir = flags.dataset.clone().or(file.extra::<PathBuf>("dataset")?);
    if let Some(d) = &dir {
        if !d.is_dir() {
            return Err(Error::Data(format!("dataset directory {} does not exist", d.display())));
        }
    }
    let files = MnistFiles::locate(dir.as_deref())?;
    let (train, test) = files.load()?;
    Ok(Mnist { dir, train, test })
}

fn labels_of(flags: &DataFlags, file: &FileConfig) -> Result<LabelCount> {
    Ok(flags.labels.or(file.extra("labels")?).unwrap_or(LabelCount::All))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn mean_reconstruction(model: &SsVaeModel<f32>, ds: &LabeledDataset) -> Result<f64> {
    let s = anomaly_scores(model, ds.features(), 1, 0)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Test-set metrics the variant supports, in a fixed order.
fn test_metrics(model: &SsVaeModel<f32>, test: &LabeledDataset) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    if model.variant().has_class_head() {
        let m = evaluate_classification(model, test)?;
        out.push(("accuracy".to_string(), m.accuracy));
        out.push(("log_loss".to_string(), m.log_loss));
    }
    if model.variant().has_decoder() {
        out.push(("recon_nll".to_string(), mean_reconstruction(model, test)?));
    }
    Ok(out)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let r = resolve(&a.train, mnist_base())?;
    let mut cfg = r.cfg;
    let labels = labels_of(&a.data, &r.file)?;
    let label_seed = a.data.label_seed.or(r.file.extra("label_seed")?).unwrap_or(cfg.seed);
    let stem = format!("runs/{}-seed{}", cfg.variant, cfg.seed);
    let ckpt = a
        .checkpoint
        .clone()
        .or(cfg.checkpoint_path.clone())
        .unwrap_or_else(|| PathBuf::from(format!("{stem}.ckpt")));
    let out = a.out.clone().unwrap_or_else(|| ckpt.with_extension("csv"));
    let data = load_mnist(&a.data, &r.file)?;
    Echo::new("train")
        .opt("dataset", data.dir.as_ref().map(|d| d.display()))
        .flag("labels", labels)
        .flag("label-seed", label_seed)
        .train(&cfg, r.width)
        .flag("checkpoint", ckpt.display())
        .flag("out", out.display())
        .print();
    cfg.checkpoint_path = Some(ckpt.clone());
    let spec = dense_spec(cfg.variant, data.train.input_dim(), data.train.class_count(), r.width);
    let run = train_masked(&data.train, labels.get(), label_seed, spec, &cfg)?;
    run.log.write(&out)?;
    println!("checkpoint {}", ckpt.display());
    println!("log {}", out.display());
    for (name, v) in test_metrics(&run.model, &data.test)? {
        println!("test_{name} {v:.6}");
    }
    Ok(())
}

fn repeats_of(flag: Option<usize>, file: &FileConfig, default: usize) -> Result<usize> {
    let n = flag.or(file.extra("repeats")?).unwrap_or(default);
    if n == 0 {
        return Err(Error::Argument("repeats must be at least 1".into()));
    }
    Ok(n)
}

fn print_summary(reports: &[RunReport]) -> Result<()> {
    if reports.len() >= 2 {
        print!("{}", summaries_table(&aggregate_runs(reports)?));
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let r = resolve(&a.train, mnist_base())?;
    let data = load_mnist(&a.data, &r.file)?;
    if let Some(path) = &a.checkpoint {
        Echo::new("eval")
            .opt("dataset", data.dir.as_ref().map(|d| d.display()))
            .flag("checkpoint", path.display())
            .print();
        let model = checkpoint::load(path)?;
        let metrics = test_metrics(&model, &data.test)?;
        let mut csv = String::from("variant,metric,value\n");
        for (name, v) in &metrics {
            let _ = writeln!(csv, "{},{name},{v}", model.variant());
        }
        print!("{csv}");
        if let Some(out) = &a.out {
            write_file(out, &csv)?;
        }
        return Ok(());
    }
    let cfg = r.cfg;
    let labels = labels_of(&a.data, &r.file)?;
    let label_seed = a.data.label_seed.or(r.file.extra("label_seed")?).unwrap_or(cfg.seed);
    let repeats = repeats_of(a.repeats, &r.file, 1)?;
    Echo::new("eval")
        .opt("dataset", data.dir.as_ref().map(|d| d.display()))
        .flag("labels", labels)
        .flag("label-seed", label_seed)
        .train(&cfg, r.width)
        .flag("repeats", repeats)
        .opt("out", a.out.as_ref().map(|p| p.display()))
        .print();
    let scenario = format!("{}_labels{}", cfg.variant, labels);
    let mut csv = String::from("variant,labels,seed,label_seed,accuracy,log_loss\n");
    let mut reports = Vec::new();
    for i in 0..repeats as u64 {
        let run_cfg = TrainConfig {
            seed: cfg.seed + i,
            ..cfg.clone()
        };
        let spec = dense_spec(cfg.variant, data.train.input_dim(), data.train.class_count(), r.width);
        let run = train_masked(&data.train, labels.get(), label_seed + i, spec, &run_cfg)?;
        let m = evaluate_classification(&run.model, &data.test)?;
        let row = format!(
            "{},{labels},{},{},{},{}",
            cfg.variant, run_cfg.seed, label_seed + i, m.accuracy, m.log_loss
        );
        println!("{row}");
        let _ = writeln!(csv, "{row}");
        reports.push(RunReport {
            scenario: scenario.clone(),
            seed: run_cfg.seed,
            metrics: vec![("accuracy".into(), m.accuracy), ("log_loss".into(), m.log_loss)],
        });
    }
    if let Some(out) = &a.out {
        write_file(out, &csv)?;
    }
    print_summary(&reports)
}

fn class_of(flag: Option<usize>, file: &FileConfig, classes: usize) -> Result<usize> {
    let class = flag
        .or(file.extra("class")?)
        .ok_or_else(|| Error::Argument("--class is required".into()))?;
    if class >= classes {
        return Err(Error::Argument(format!(
            "class {class} out of range for {classes} classes"
        )));
    }
    Ok(class)
}

const ANOMALY_HEADER: &str =
    "anomalous_class,variant,label_percent,seed,label_seed,auc,n_normal,n_anomalous,normal_mean,anomalous_mean";

fn label_percent(labels: LabelCount, n: usize) -> f64 {
    match labels {
        LabelCount::All => 100.0,
        LabelCount::Count(k) => 100.0 * k as f64 / n as f64,
    }
}

fn cmd_anomaly(a: &AnomalyArgs) -> Result<()> {
    let r = resolve(&a.train, mnist_base())?;
    let data = load_mnist(&a.data, &r.file)?;
    let class = class_of(a.class, &r.file, data.train.class_count())?;
    let split = make_anomaly_split(&data.train, &data.test, class)?;
    if let Some(path) = &a.checkpoint {
        Echo::new("anomaly")
            .opt("dataset", data.dir.as_ref().map(|d| d.display()))
            .flag("class", class)
            .flag("checkpoint", path.display())
            .print();
        let model = checkpoint::load(path)?;
        let rep = evaluate_anomaly(&model, &split)?;
        println!("anomalous_class,variant,auc,n_normal,n_anomalous,normal_mean,anomalous_mean");
        println!(
            "{class},{},{},{},{},{},{}",
            model.variant(),
            rep.auc,
            rep.n_normal,
            rep.n_anomalous,
            rep.normal.mean,
            rep.anomalous.mean
        );
        return Ok(());
    }
    let cfg = r.cfg;
    let labels = labels_of(&a.data, &r.file)?;
    let label_seed = a.data.label_seed.or(r.file.extra("label_seed")?).unwrap_or(cfg.seed);
    let repeats = repeats_of(a.repeats, &r.file, 1)?;
    Echo::new("anomaly")
        .opt("dataset", data.dir.as_ref().map(|d| d.display()))
        .flag("class", class)
        .flag("labels", labels)
        .flag("label-seed", label_seed)
        .train(&cfg, r.width)
        .flag("repeats", repeats)
        .opt("out", a.out.as_ref().map(|p| p.display()))
        .print();
    let percent = label_percent(labels, split.train.len());
    let fraction = match labels {
        LabelCount::All => 1.0,
        LabelCount::Count(k) => (k as f64 / split.train.len() as f64).min(1.0),
    };
    let mut csv = format!("{ANOMALY_HEADER}\n");
    print!("{csv}");
    let mut reports = Vec::new();
    for i in 0..repeats as u64 {
        let run_cfg = TrainConfig {
            seed: cfg.seed + i,
            ..cfg.clone()
        };
        let spec = dense_spec(cfg.variant, split.train.input_dim(), split.train.class_count(), r.width);
        let (_, rep) = run_anomaly(&split, fraction, label_seed + i, spec, &run_cfg)?;
        let row = format!(
            "{class},{},{percent},{},{},{},{},{},{},{}",
            cfg.variant,
            run_cfg.seed,
            label_seed + i,
            rep.auc,
            rep.n_normal,
            rep.n_anomalous,
            rep.normal.mean,
            rep.anomalous.mean
        );
        println!("{row}");
        let _ = writeln!(csv, "{row}");
        reports.push(RunReport {
            scenario: format!("{}_class{class}", cfg.variant),
            seed: run_cfg.seed,
            metrics: vec![("auc".into(), rep.auc)],
        });
    }
    if let Some(out) = &a.out {
        write_file(out, &csv)?;
    }
    print_summary(&reports)
}

fn cmd_labelsweep(a: &SweepArgs) -> Result<()> {
    let r = resolve(&a.train, mnist_base())?;
    let data = load_mnist(&a.data, &r.file)?;
    let class = class_of(a.class, &r.file, data.train.class_count())?;
    let split = make_anomaly_split(&data.train, &data.test, class)?;
    let fractions = a
        .fractions
        .clone()
        .unwrap_or_else(|| vec![1.0, 10.0, 25.0, 50.0, 75.0, 99.0]);
    if fractions.is_empty() || fractions.iter().any(|f| !(0.0..=100.0).contains(f)) {
        return Err(Error::Argument("label percentages must lie in [0, 100]".into()));
    }
    let cfg = r.cfg;
    let label_seed = a.data.label_seed.or(r.file.extra("label_seed")?).unwrap_or(cfg.seed);
    let repeats = repeats_of(a.repeats, &r.file, 1)?;
    let list: Vec<String> = fractions.iter().map(|f| f.to_string()).collect();
    Echo::new("labelsweep")
        .opt("dataset", data.dir.as_ref().map(|d| d.display()))
        .flag("class", class)
        .flag("fractions", list.join(","))
        .flag("label-seed", label_seed)
        .train(&cfg, r.width)
        .flag("repeats", repeats)
        .opt("out", a.out.as_ref().map(|p| p.display()))
        .print();
    println!("{ANOMALY_HEADER}");
    let mut csv = String::from("anomalous_class,label_percent,auc,stderr,seeds\n");
    for &percent in &fractions {
        let mut aucs = Vec::new();
        for i in 0..repeats as u64 {
            let run_cfg = TrainConfig {
                seed: cfg.seed + i,
                ..cfg.clone()
            };
            let spec =
                dense_spec(cfg.variant, split.train.input_dim(), split.train.class_count(), r.width);
            let (_, rep) = run_anomaly(&split, percent / 100.0, label_seed + i, spec, &run_cfg)?;
            println!(
                "{class},{},{percent},{},{},{},{},{},{},{}",
                cfg.variant,
                run_cfg.seed,
                label_seed + i,
                rep.auc,
                rep.n_normal,
                rep.n_anomalous,
                rep.normal.mean,
                rep.anomalous.mean
            );
            aucs.push(rep.auc);
        }
        let (mean, stderr) = crate::evaluation::mean_sem(&aucs);
        let _ = writeln!(csv, "{class},{percent},{mean},{stderr},{repeats}");
    }
    print!("{csv}");
    if let Some(out) = &a.out {
        write_file(out, &csv)?;
    }
    Ok(())
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint)?;
    let side = image_side(model.spec().input_dim)?;
    if a.grid == 0 {
        return Err(Error::Argument("grid must be at least 1".into()));
    }
    let layout = match a.layout.as_deref() {
        Some("grid") => LatentLayout::Grid,
        Some("normal") => LatentLayout::Normal,
        None if model.spec().latent_dim == 2 => LatentLayout::Grid,
        None => LatentLayout::Normal,
        Some(other) => {
            return Err(Error::Argument(format!(
                "unknown layout {other:?} (expected grid or normal)"
            )))
        }
    };
    let layout_name = if layout == LatentLayout::Grid { "grid" } else { "normal" };
    Echo::new("generate")
        .flag("checkpoint", a.checkpoint.display())
        .flag("grid", a.grid)
        .flag("layout", layout_name)
        .flag("seed", a.seed)
        .flag("out", a.out.display())
        .print();
    let per_class = generate_per_class(&model, a.grid, layout, a.seed)?;
    let (grids, combined) = class_grids(&per_class, side, a.grid)?;
    for (k, g) in grids.iter().enumerate() {
        g.write_pgm(&a.out.join(format!("class_{k}.pgm")))?;
    }
    combined.write_pgm(&a.out.join("grid.pgm"))?;
    println!("class,predicted,agreement");
    let verdicts = self_consistency(&model, &per_class)?;
    for v in &verdicts {
        println!("{},{},{}", v.class, v.predicted, v.agreement);
    }
    let ok = verdicts.iter().filter(|v| v.consistent()).count();
    println!("# {ok}/{} grids classified as their class", verdicts.len());
    Ok(())
}

/// Training defaults for the disentanglement runs.
pub fn disentangle_base() -> TrainConfig {
    TrainConfig {
        epochs: 100,
        beta_norm: 0.25,
        batch_size: 64,
        ..TrainConfig::default()
    }
}

fn cmd_disentangle(a: &DisentangleArgs) -> Result<()> {
    let r = resolve(&a.train, disentangle_base())?;
    let cfg = r.cfg;
    if cfg.variant != Variant::SemiSupervised {
        return Err(Error::Argument("disentangle trains SS models only".into()));
    }
    let fds = FactorDataset::generate(SynthConfig::default())?;
    let factor = match a.factor.as_deref() {
        None => DisentangleSetup::default().factor,
        Some(name) => FACTOR_NAMES.iter().position(|f| *f == name).ok_or_else(|| {
            Error::Argument(format!("unknown factor {name:?} (expected one of {FACTOR_NAMES:?})"))
        })?,
    };
    let setup = DisentangleSetup {
        factor,
        latent_dim: a.latent_dim.unwrap_or(DisentangleSetup::default().latent_dim),
        width: r.width.unwrap_or(DisentangleSetup::default().width),
        ..DisentangleSetup::default()
    };
    let counts = a.labels.clone().unwrap_or_else(|| vec![0, 96, fds.len()]);
    if let Some(&n) = counts.iter().find(|&&n| n > fds.len()) {
        return Err(Error::Argument(format!("{n} labels exceed the {} images", fds.len())));
    }
    let repeats = repeats_of(a.repeats, &r.file, 5)?;
    let list: Vec<String> = counts.iter().map(|n| n.to_string()).collect();
    Echo::new("disentangle")
        .flag("labels", list.join(","))
        .switch("labeled-only", a.labeled_only)
        .flag("latent-dim", setup.latent_dim)
        .flag("factor", FACTOR_NAMES[setup.factor])
        .train(&cfg, Some(setup.width))
        .flag("repeats", repeats)
        .opt("out", a.out.as_ref().map(|p| p.display()))
        .print();
    println!("labels,labeled_only,seed,score");
    let mut csv = String::from("labels,labeled_only,score,stderr,seeds\n");
    for &n in &counts {
        let mut scores = Vec::new();
        for i in 0..repeats as u64 {
            let run_cfg = TrainConfig {
                seed: cfg.seed + i,
                ..cfg.clone()
            };
            let s = setup.run(&fds, n, a.labeled_only, &run_cfg)?;
            println!("{n},{},{},{s}", a.labeled_only, run_cfg.seed);
            scores.push(s);
        }
        let (mean, stderr) = crate::evaluation::mean_sem(&scores);
        let _ = writeln!(csv, "{n},{},{mean},{stderr},{repeats}", a.labeled_only);
    }
    print!("{csv}");
    if let Some(out) = &a.out {
        write_file(out, &csv)?;
    }
    Ok(())
}

/// Returns whether every case passed.
fn cmd_gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let opts = GradCheckOptions {
        double: a.double,
        fault: a.inject_fault,
    };
    Echo::new("gradcheck")
        .switch("double", a.double)
        .opt("inject-fault", a.inject_fault)
        .print();
    let results = match &a.only {
        Some(names) => run_cases(&names.iter().map(String::as_str).collect::<Vec<_>>(), &opts)?,
        None => run_gradcheck(&opts)?,
    };
    for r in &results {
        println!("{r}");
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).collect();
    for r in &failed {
        eprintln!("gradient check failed: {} (max rel err {:.3e})", r.name, r.max_rel_error);
    }
    Ok(failed.is_empty())
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Anomaly(a) => cmd_anomaly(a).map(|_| true),
        Command::Labelsweep(a) => cmd_labelsweep(a).map(|_| true),
        Command::Generate(a) => cmd_generate(a).map(|_| true),
        Command::Disentangle(a) => cmd_disentangle(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
