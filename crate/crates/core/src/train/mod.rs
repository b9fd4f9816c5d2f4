//! Losses, Adam and the epoch loop.

mod adam;
mod loss;
mod metrics;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use loss::{cross_entropy_loss, mse_loss, LossKind};
pub use metrics::{DivergenceRecord, EpochMetrics, MetricsHistory, METRICS_HEADER};

use crate::autodiff::{GradMap, ParamId, Var};
use crate::data::{SetDataset, TargetBatch};
use crate::error::{Error, Result};
use crate::model::{Model, TaskHead};
use crate::params::{Ctx, Mode, ParamStore};
use crate::rng::{SeededRng, Stream};
use crate::tensor::{SetBatch, Tensor};

/// Losses above this magnitude count as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_one() -> usize {
    1
}
fn default_chunk() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: LossKind,
    /// Optimizer steps between gradient-norm samples.
    #[serde(default = "default_one")]
    pub grad_log_every: usize,
    /// Sets per forward/backward pass inside a mini-batch; gradients are
    /// summed exactly, so this only trades memory for overhead.
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    /// Record measured time in `wall_seconds`; off keeps metrics byte-reproducible.
    #[serde(default)]
    pub wall_clock: bool,
}

impl TrainConfig {
    pub fn new(epochs: usize) -> Self {
        TrainConfig {
            batch_size: default_batch(),
            epochs,
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            seed: 0,
            loss: LossKind::Mse,
            grad_log_every: 1,
            chunk_size: default_chunk(),
            wall_clock: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(name, format!("must lie in (0, 1), got {b}")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if self.grad_log_every == 0 {
            return Err(Error::config("grad_log_every", "must be positive"));
        }
        if self.chunk_size == 0 {
            return Err(Error::config("chunk_size", "must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }
}

/// Internal parallelism: `SETNET_THREADS` if set, else the machine's cores.
pub fn thread_count() -> usize {
    std::env::var("SETNET_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

pub(crate) fn slice_targets(t: &TargetBatch, start: usize, len: usize) -> TargetBatch {
    match t {
        TargetBatch::Values(v) => {
            let w = v.shape()[1];
            let data = v.data()[start * w..(start + len) * w].to_vec();
            TargetBatch::Values(Tensor::new(&[len, w], data).expect("slice shape"))
        }
        TargetBatch::Classes(c) => TargetBatch::Classes(c[start..start + len].to_vec()),
    }
}

/// Loss node for one batch of predictions.
pub fn loss_var(ctx: &mut Ctx, pred: Var, targets: &TargetBatch, kind: LossKind) -> Result<Var> {
    match (kind, targets) {
        (LossKind::Mse, TargetBatch::Values(t)) => mse_loss(&mut ctx.tape, pred, t),
        (LossKind::CrossEntropy, TargetBatch::Classes(c)) => cross_entropy_loss(&mut ctx.tape, pred, c),
        (k, _) => Err(Error::config("loss", format!("{k:?} does not match the dataset's target kind"))),
    }
}

/// Loss, gradients and buffer updates of one mini-batch.
pub struct StepResult {
    pub loss: f64,
    pub grads: GradMap,
    pub updates: Vec<(ParamId, Tensor)>,
}

struct ChunkResult {
    loss: f64,
    grads: GradMap,
    updates: Vec<(ParamId, Tensor)>,
}

fn chunk_pass(
    model: &Model,
    batch: &SetBatch,
    targets: &TargetBatch,
    kind: LossKind,
    mode: Mode,
    (start, len): (usize, usize),
    want_grads: bool,
) -> Result<ChunkResult> {
    let total = batch.sets();
    let sub = if len == total { batch.clone() } else { batch.slice_sets(start, len) };
    let t = slice_targets(targets, start, len);
    let mut ctx = Ctx::new(model.store(), mode);
    let pred = model.forward(&mut ctx, &sub)?;
    let loss = loss_var(&mut ctx, pred, &t, kind)?;
    let weight = len as f64 / total as f64;
    let scaled = ctx.tape.scale(loss, weight)?;
    let value = ctx.tape.value(scaled).item();
    let grads = if want_grads { ctx.backward(scaled)? } else { GradMap::default() };
    Ok(ChunkResult { loss: value, grads, updates: ctx.take_updates() })
}

fn run_chunks(
    model: &Model,
    batch: &SetBatch,
    targets: &TargetBatch,
    kind: LossKind,
    mode: Mode,
    chunk: usize,
    want_grads: bool,
) -> Result<StepResult> {
    let n = batch.sets();
    let chunk = if model.batch_coupled() && mode == Mode::Train { n } else { chunk.min(n).max(1) };
    let ranges: Vec<(usize, usize)> = (0..n).step_by(chunk).map(|s| (s, chunk.min(n - s))).collect();
    let threads = thread_count().min(ranges.len()).max(1);
    let results: Vec<Result<ChunkResult>> = if threads == 1 {
        ranges
            .iter()
            .map(|&r| chunk_pass(model, batch, targets, kind, mode, r, want_grads))
            .collect()
    } else {
        let mut slots: Vec<Option<Result<ChunkResult>>> = (0..ranges.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let per = ranges.len().div_ceil(threads);
            let handles: Vec<_> = ranges
                .chunks(per)
                .map(|group| {
                    s.spawn(move || {
                        group
                            .iter()
                            .map(|&r| chunk_pass(model, batch, targets, kind, mode, r, want_grads))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            let mut i = 0;
            for h in handles {
                for r in h.join().expect("worker panicked") {
                    slots[i] = Some(r);
                    i += 1;
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk ran")).collect()
    };
    // fixed accumulation order keeps results independent of thread count
    let mut out = StepResult { loss: 0.0, grads: GradMap::default(), updates: Vec::new() };
    for r in results {
        let r = r?;
        out.loss += r.loss;
        out.grads.accumulate(r.grads);
        out.updates.extend(r.updates);
    }
    Ok(out)
}

/// Mean loss and its gradients over a mini-batch, processed in chunks.
pub fn batch_gradients(
    model: &Model,
    batch: &SetBatch,
    targets: &TargetBatch,
    kind: LossKind,
    mode: Mode,
    chunk: usize,
) -> Result<StepResult> {
    run_chunks(model, batch, targets, kind, mode, chunk, true)
}

/// Mean loss over a whole dataset in eval mode.
pub fn evaluate(model: &Model, ds: &SetDataset, kind: LossKind, chunk: usize) -> Result<f64> {
    let n = ds.n_sets();
    let block = 256.max(chunk);
    let mut total = 0.0;
    for start in (0..n).step_by(block) {
        let len = block.min(n - start);
        let idx: Vec<usize> = (start..start + len).collect();
        let (b, t) = ds.batch(&idx)?;
        let r = run_chunks(model, &b, &t, kind, Mode::Eval, chunk, false)?;
        total += r.loss * len as f64;
    }
    Ok(total / n as f64)
}

/// L2 norm of the gradient of every trainable tensor in `layer`.
pub fn layer_grad_norm(store: &ParamStore, grads: &GradMap, layer: usize) -> f64 {
    grads
        .iter()
        .filter(|(id, _)| store.get(*id).layer == layer)
        .map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn check_compat(model: &Model, ds: &SetDataset, cfg: &TrainConfig) -> Result<()> {
    let mc = model.config();
    if ds.features() != mc.input_dim {
        return Err(Error::dim(format!(
            "dataset has {} features, model expects {}",
            ds.features(),
            mc.input_dim
        )));
    }
    let classification = ds.targets().is_classification();
    match (cfg.loss, classification, mc.head) {
        (LossKind::Mse, false, TaskHead::Regression) => {
            if ds.targets().width() != mc.output_dim {
                return Err(Error::dim(format!(
                    "targets have width {}, model outputs {}",
                    ds.targets().width(),
                    mc.output_dim
                )));
            }
        }
        (LossKind::CrossEntropy, true, TaskHead::Classification) => {}
        _ => {
            return Err(Error::config(
                "loss",
                format!("{:?} loss with {:?} head does not fit this dataset", cfg.loss, mc.head),
            ))
        }
    }
    Ok(())
}

/// Train in place. Returns the per-epoch history; on divergence the history
/// stops at the last completed epoch and `diverged` is set.
pub fn train(
    model: &mut Model,
    train_ds: &SetDataset,
    test_ds: &SetDataset,
    cfg: &TrainConfig,
    mut on_epoch: Option<&mut dyn FnMut(&EpochMetrics)>,
) -> Result<MetricsHistory> {
    cfg.validate()?;
    check_compat(model, train_ds, cfg)?;
    check_compat(model, test_ds, cfg)?;
    let mut history = MetricsHistory::default();
    let mut adam = Adam::new(model.store(), cfg.adam());
    let layers = model.encoder_layers();
    let (first, last) = (layers[0], *layers.last().expect("encoder has layers"));
    let start = Instant::now();
    let n = train_ds.n_sets();
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let order = SeededRng::new(cfg.seed, Stream::Shuffle, epoch as u64).permutation(n);
        let mut loss_sum = 0.0;
        let (mut g_first, mut g_last, mut g_samples) = (0.0, 0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let (batch, targets) = train_ds.batch(idx)?;
            let r = batch_gradients(model, &batch, &targets, cfg.loss, Mode::Train, cfg.chunk_size)?;
            if !r.loss.is_finite() || r.loss.abs() > DIVERGENCE_THRESHOLD {
                history.diverged = Some(DivergenceRecord { epoch, loss: r.loss });
                return Ok(history);
            }
            loss_sum += r.loss * idx.len() as f64;
            if step.is_multiple_of(cfg.grad_log_every) {
                g_first += layer_grad_norm(model.store(), &r.grads, first);
                g_last += layer_grad_norm(model.store(), &r.grads, last);
                g_samples += 1;
            }
            step += 1;
            if let Err(e) = adam.step(model.store_mut(), &r.grads) {
                if matches!(e, Error::Numeric(_)) {
                    history.diverged = Some(DivergenceRecord { epoch, loss: r.loss });
                    return Ok(history);
                }
                return Err(e);
            }
            model.store_mut().apply_updates(r.updates)?;
        }
        let test_loss = evaluate(model, test_ds, cfg.loss, cfg.chunk_size)?;
        if !test_loss.is_finite() || test_loss.abs() > DIVERGENCE_THRESHOLD {
            history.diverged = Some(DivergenceRecord { epoch, loss: test_loss });
            return Ok(history);
        }
        let samples = g_samples.max(1) as f64;
        let row = EpochMetrics {
            epoch,
            train_loss: loss_sum / n as f64,
            test_loss,
            wall_seconds: if cfg.wall_clock { start.elapsed().as_secs_f64() } else { 0.0 },
            grad_norm_first: g_first / samples,
            grad_norm_last: g_last / samples,
        };
        if let Some(cb) = on_epoch.as_mut() {
            cb(&row);
        }
        history.rows.push(row);
    }
    Ok(history)
}
