//! Command-line front end. Machine-readable output goes to stdout, progress
//! and errors to stderr.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::{generate, read_dataset, write_dataset, GenSpec, Task, TargetBatch, SETD_VERSION};
use crate::diagnostics::{
    encoder_equivariance_check, finite_diff_check, grad_profile, invariance_check, prop1_report, prop1_sweep,
    FdOptions, PermOptions,
};
use crate::error::{Error, Result};
use crate::json::to_canonical_string;
use crate::model::{Family, Model, ModelConfig, TaskHead, CHECKPOINT_VERSION};
use crate::params::Mode;
use crate::rng::{SeededRng, Stream};
use crate::tensor::{Mask, SetBatch, Tensor};
use crate::train::{train, LossKind, TrainConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "setnet", version, about = "Deep permutation-invariant set networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    NormalVar,
    ToyShapes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Invariance,
    Equivariance,
    Gradcheck,
    Prop1,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as a SETD file.
    GenData {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        n_sets: usize,
        #[arg(long)]
        set_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stream family; use distinct splits for train and test data.
        #[arg(long, default_value_t = 0)]
        split: u32,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model described by a JSON config with `model` and `train` sections.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        test_data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Record elapsed time in the metrics (breaks byte reproducibility).
        #[arg(long)]
        wall_clock: bool,
    },
    /// Run a diagnostic suite and print a JSON report.
    Check {
        #[arg(long, value_enum)]
        suite: Suite,
        /// Model config (bare or under a `model` key); required except for prop1.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        n_perms: usize,
        #[arg(long, default_value_t = 4)]
        sets: usize,
        #[arg(long, default_value_t = 8)]
        set_size: usize,
        #[arg(long)]
        tolerance: Option<f64>,
        /// Smallest relative-error denominator for gradcheck.
        #[arg(long, default_value_t = 1e-8)]
        fd_floor: f64,
    },
    /// Per-layer gradient norms of freshly initialized models as CSV.
    Diagnose {
        #[arg(long)]
        family: String,
        #[arg(long, value_delimiter = ',', required = true)]
        depths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1.0)]
        wq_scale: f64,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 64)]
        sets: usize,
        #[arg(long, default_value_t = 500)]
        set_size: usize,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit status for an error: 2 for bad input, 3 for files, 4 for divergence.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::BadMagic { .. }
        | Error::Version { .. }
        | Error::Truncated { .. }
        | Error::Malformed { .. } => EXIT_IO,
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::GenData { task, n_sets, set_size, seed, split, classes, out } => {
            let task = match task {
                TaskArg::NormalVar => Task::NormalVar,
                TaskArg::ToyShapes => Task::ToyShapes,
            };
            let mut spec = GenSpec::new(task, n_sets, set_size, seed).with_split(split);
            if let Some(c) = classes {
                spec.classes = c;
            }
            cmd_gen_data(&spec, &out)
        }
        Command::Train { config, train_data, test_data, out_dir, epochs, batch_size, learning_rate, seed, wall_clock } => {
            let (model, mut tc) = read_experiment(&config)?;
            if let Some(v) = epochs {
                tc.epochs = v;
            }
            if let Some(v) = batch_size {
                tc.batch_size = v;
            }
            if let Some(v) = learning_rate {
                tc.learning_rate = v;
            }
            if let Some(v) = seed {
                tc.seed = v;
            }
            tc.wall_clock |= wall_clock;
            cmd_train(&model, &tc, &train_data, &test_data, &out_dir)
        }
        Command::Check { suite, config, seed, n_perms, sets, set_size, tolerance, fd_floor } => {
            let model = match (suite, config) {
                (Suite::Prop1, _) => None,
                (_, Some(p)) => Some(read_model_config(&p)?),
                (_, None) => return Err(Error::config("config", "this suite needs --config")),
            };
            let opts = CheckArgs { seed, n_perms, sets, set_size, tolerance, fd_floor };
            let (report, pass) = cmd_check(suite, model.as_ref(), &opts)?;
            emit(&(serde_json::to_string_pretty(&report)? + "\n"));
            Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::Diagnose { family, depths, seeds, wq_scale, hidden, sets, set_size, data_seed, out } => {
            let family =
                Family::parse(&family).ok_or_else(|| Error::config("family", format!("unknown family `{family}`")))?;
            let args = DiagnoseArgs { family, depths, seeds, wq_scale, hidden, sets, set_size, data_seed };
            cmd_diagnose(&args, out.as_deref())
        }
    }
}

/// Write to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Provenance record written next to every artifact-producing command.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub artifacts: Vec<Artifact>,
    pub versions: BTreeMap<String, String>,
    pub seed: u64,
    pub wall_seconds: f64,
    /// SHA-256 of the canonical manifest without `wall_seconds` and this field.
    pub manifest_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, config: Value, artifacts: &[&Path], seed: u64, started: Instant) -> Result<Self> {
        let artifacts = artifacts
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).map_err(|e| Error::io(*p, e))?;
                Ok(Artifact { path: p.display().to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
            })
            .collect::<Result<Vec<_>>>()?;
        let versions = BTreeMap::from([
            ("setnet".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("setd".to_string(), SETD_VERSION.to_string()),
            ("checkpoint".to_string(), CHECKPOINT_VERSION.to_string()),
        ]);
        let mut m = RunManifest {
            command: command.to_string(),
            config,
            artifacts,
            versions,
            seed,
            wall_seconds: 0.0,
            manifest_hash: String::new(),
        };
        m.manifest_hash = sha256_hex(to_canonical_string(&m)?.as_bytes());
        m.wall_seconds = started.elapsed().as_secs_f64();
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = crate::json::to_canonical_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn cmd_gen_data(spec: &GenSpec, out: &Path) -> Result<u8> {
    let started = Instant::now();
    let ds = generate(spec)?;
    write_dataset(&ds, out)?;
    let m = RunManifest::new("gen-data", serde_json::to_value(spec)?, &[out], spec.seed, started)?;
    m.write(&manifest_path(out))?;
    eprintln!("wrote {} sets of {} elements to {}", ds.n_sets(), ds.set_size(), out.display());
    Ok(EXIT_OK)
}

fn keys_of<T: Serialize>(v: &T) -> BTreeSet<String> {
    match serde_json::to_value(v) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => BTreeSet::new(),
    }
}

fn unknown_keys(v: &Value, allowed: &BTreeSet<String>, prefix: &str, out: &mut Vec<String>) {
    if let Value::Object(m) = v {
        out.extend(m.keys().filter(|k| !allowed.contains(*k)).map(|k| format!("{prefix}{k}")));
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), format!("malformed JSON: {e}")))
}

fn model_keys() -> BTreeSet<String> {
    keys_of(&ModelConfig::new(Family::DeepSets, 1, 1, 1))
}

fn check_keys(bad: Vec<String>) -> Result<()> {
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::config("config", format!("unknown keys: {}", bad.join(", "))))
    }
}

/// Experiment file: `{"model": ModelConfig, "train": TrainConfig}`.
pub fn read_experiment(path: &Path) -> Result<(ModelConfig, TrainConfig)> {
    let v = read_json(path)?;
    let mut bad = Vec::new();
    let top: BTreeSet<String> = ["model", "train"].iter().map(|s| s.to_string()).collect();
    unknown_keys(&v, &top, "", &mut bad);
    unknown_keys(&v["model"], &model_keys(), "model.", &mut bad);
    unknown_keys(&v["train"], &keys_of(&TrainConfig::new(1)), "train.", &mut bad);
    check_keys(bad)?;
    let model: ModelConfig = serde_json::from_value(v.get("model").cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::config("model", e.to_string()))?;
    let train: TrainConfig = serde_json::from_value(v.get("train").cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::config("train", e.to_string()))?;
    Ok((model.resolved()?, train))
}

/// A model config, either bare or under a `model` key.
pub fn read_model_config(path: &Path) -> Result<ModelConfig> {
    let v = read_json(path)?;
    let inner = match v.get("model") {
        Some(m) => m.clone(),
        None => v,
    };
    let mut bad = Vec::new();
    unknown_keys(&inner, &model_keys(), "", &mut bad);
    check_keys(bad)?;
    let c: ModelConfig = serde_json::from_value(inner).map_err(|e| Error::config("model", e.to_string()))?;
    c.resolved()
}

pub fn cmd_train(model_cfg: &ModelConfig, tc: &TrainConfig, train_path: &Path, test_path: &Path, out_dir: &Path) -> Result<u8> {
    let started = Instant::now();
    tc.validate()?;
    let train_ds = read_dataset(train_path)?;
    let test_ds = read_dataset(test_path)?;
    let mut model = Model::build(model_cfg)?;
    eprintln!(
        "training {:?} depth {} ({} parameters) on {} sets for {} epochs",
        model_cfg.family,
        model_cfg.encoder_depth,
        model.param_count(),
        train_ds.n_sets(),
        tc.epochs
    );
    let mut log = |r: &crate::train::EpochMetrics| {
        eprintln!("epoch {:>3}  train {:.6}  test {:.6}", r.epoch, r.train_loss, r.test_loss);
    };
    let history = train(&mut model, &train_ds, &test_ds, tc, Some(&mut log))?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics = out_dir.join("metrics.csv");
    let ckpt = out_dir.join("model.setn");
    history.write_csv(&metrics)?;
    model.save(&ckpt)?;
    let config = json!({ "model": model_cfg, "train": tc });
    let m = RunManifest::new("train", config, &[&metrics, &ckpt], tc.seed, started)?;
    m.write(&out_dir.join("manifest.json"))?;
    if let Some(d) = history.diverged {
        eprintln!("diverged at epoch {} (loss {})", d.epoch, d.loss);
        return Ok(EXIT_DIVERGED);
    }
    if let Some(l) = history.final_test_loss() {
        eprintln!("final test loss {l}");
    }
    Ok(EXIT_OK)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckArgs {
    pub seed: u64,
    pub n_perms: usize,
    pub sets: usize,
    pub set_size: usize,
    pub tolerance: Option<f64>,
    pub fd_floor: f64,
}

/// Gaussian inputs with the last set shortened so padding is exercised.
pub fn probe_batch(sets: usize, set_size: usize, features: usize, seed: u64) -> Result<SetBatch> {
    let mut rng = SeededRng::new(seed, Stream::Check, 100);
    let data = (0..sets * set_size * features).map(|_| rng.normal()).collect();
    let t = Tensor::new(&[sets, set_size, features], data)?;
    if sets > 1 && set_size > 2 {
        let mut lengths = vec![set_size; sets];
        lengths[sets - 1] = set_size - 1;
        SetBatch::new(t, Some(Mask::from_lengths(&lengths, set_size)?))
    } else {
        SetBatch::dense(t)
    }
}

fn probe_targets(c: &ModelConfig, sets: usize, seed: u64) -> Result<(TargetBatch, LossKind)> {
    let mut rng = SeededRng::new(seed, Stream::Check, 101);
    Ok(match c.head {
        TaskHead::Regression => {
            let t = Tensor::new(&[sets, c.output_dim], (0..sets * c.output_dim).map(|_| rng.normal()).collect())?;
            (TargetBatch::Values(t), LossKind::Mse)
        }
        TaskHead::Classification => {
            (TargetBatch::Classes((0..sets).map(|_| rng.below(c.output_dim)).collect()), LossKind::CrossEntropy)
        }
    })
}

pub fn cmd_check(suite: Suite, model_cfg: Option<&ModelConfig>, a: &CheckArgs) -> Result<(Value, bool)> {
    if suite == Suite::Prop1 {
        let rows = prop1_sweep();
        let report = prop1_report(&rows);
        let satisfying: Vec<String> = rows.iter().filter(|r| r.satisfies()).map(|r| r.setting.to_string()).collect();
        let pass = report.pass;
        return Ok((json!({ "suite": "prop1", "pass": pass, "satisfying": satisfying, "rows": rows, "report": report }), pass));
    }
    let c = model_cfg.ok_or_else(|| Error::config("config", "this suite needs a model config"))?;
    let model = Model::build(c)?;
    let batch = probe_batch(a.sets, a.set_size, c.input_dim, a.seed)?;
    let perm = PermOptions { n_perms: a.n_perms, tolerance: a.tolerance.unwrap_or(1e-9), seed: a.seed, mode: Mode::Train };
    let (name, report) = match suite {
        Suite::Invariance => ("invariance", serde_json::to_value(invariance_check(&model, &batch, &perm)?)?),
        Suite::Equivariance => ("equivariance", serde_json::to_value(encoder_equivariance_check(&model, &batch, &perm)?)?),
        Suite::Gradcheck => {
            let (targets, kind) = probe_targets(c, batch.sets(), a.seed)?;
            let opts =
                FdOptions { seed: a.seed, tolerance: a.tolerance.unwrap_or(1e-5), floor: a.fd_floor, ..FdOptions::default() };
            ("gradcheck", serde_json::to_value(finite_diff_check(&model, &batch, &targets, kind, &opts)?)?)
        }
        Suite::Prop1 => unreachable!("handled above"),
    };
    let pass = report["pass"].as_bool().unwrap_or(false);
    Ok((json!({ "suite": name, "pass": pass, "family": c.family, "report": report }), pass))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnoseArgs {
    pub family: Family,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub wq_scale: f64,
    pub hidden: usize,
    pub sets: usize,
    pub set_size: usize,
    pub data_seed: u64,
}

pub const DIAGNOSE_HEADER: &str = "family,depth,seed,layer_index,grad_norm";

/// Gradient profiles for every depth and seed, one CSV row per layer.
pub fn diagnose_csv(a: &DiagnoseArgs) -> Result<String> {
    let ds = generate(&GenSpec::new(Task::NormalVar, a.sets, a.set_size, a.data_seed))?;
    let idx: Vec<usize> = (0..a.sets).collect();
    let (batch, targets) = ds.batch(&idx)?;
    let family = serde_json::to_value(a.family)?;
    let family = family.as_str().unwrap_or_default().to_string();
    let mut csv = String::from(DIAGNOSE_HEADER);
    csv.push('\n');
    for &depth in &a.depths {
        for &seed in &a.seeds {
            let mut c = ModelConfig::new(a.family, 1, depth, a.hidden).with_decoder(&[a.hidden]);
            c.wq_scale = a.wq_scale;
            let p = grad_profile(&c, &batch, &targets, LossKind::Mse, seed)?;
            eprintln!(
                "{family} depth {depth} seed {seed}: first {:.3e} last {:.3e} ratio {:.3e}",
                p.first_encoder_norm(),
                p.last_encoder_norm(),
                p.first_last_ratio()
            );
            for l in &p.layers {
                csv.push_str(&format!("{family},{depth},{seed},{},{}\n", l.layer_index, l.grad_norm));
            }
        }
    }
    Ok(csv)
}

pub fn cmd_diagnose(a: &DiagnoseArgs, out: Option<&Path>) -> Result<u8> {
    if a.depths.contains(&0) {
        return Err(Error::config("depths", "depths must be positive"));
    }
    let started = Instant::now();
    let csv = diagnose_csv(a)?;
    match out {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
            let config = json!({
                "family": a.family,
                "depths": a.depths,
                "seeds": a.seeds,
                "wq_scale": a.wq_scale,
                "hidden": a.hidden,
                "sets": a.sets,
                "set_size": a.set_size,
                "data_seed": a.data_seed,
            });
            let m = RunManifest::new("diagnose", config, &[path], a.data_seed, started)?;
            m.write(&manifest_path(path))?;
        }
        None => emit(&csv),
    }
    Ok(EXIT_OK)
}
