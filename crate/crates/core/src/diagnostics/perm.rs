use serde_json::json;

use super::CheckReport;
use crate::blocks::Block;
use crate::error::Result;
use crate::model::Model;
use crate::params::{Ctx, Mode, ParamStore};
use crate::rng::{SeededRng, Stream};
use crate::tensor::{permute_tensor_elements, SetBatch, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PermOptions {
    pub n_perms: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for PermOptions {
    fn default() -> Self {
        PermOptions { n_perms: 20, tolerance: 1e-9, seed: 0, mode: Mode::Train }
    }
}

/// One random permutation of the valid elements of every set.
pub fn random_perms(batch: &SetBatch, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    (0..batch.sets())
        .map(|s| {
            let count = (0..batch.elems()).filter(|&e| batch.is_valid(s, e)).count();
            rng.permutation(count)
        })
        .collect()
}

/// Largest deviation of `f(πx)` from `f(x)`, with the set achieving it.
fn invariance_worst(f: &dyn Fn(&SetBatch) -> Result<Tensor>, base: &Tensor, batch: &SetBatch, perms: &[Vec<usize>]) -> Result<(f64, usize)> {
    let out = f(&batch.permute_elements(perms))?;
    Ok(worst_row(base, &out, batch.sets()))
}

/// Largest absolute difference and the set where it occurs; NaN counts as infinite.
fn worst_row(a: &Tensor, b: &Tensor, sets: usize) -> (f64, usize) {
    let per = a.numel() / sets.max(1);
    let mut best = (0.0f64, 0);
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        let d = if x == y { 0.0 } else { (x - y).abs() };
        let d = if d.is_nan() { f64::INFINITY } else { d };
        if d > best.0 {
            best = (d, i / per.max(1));
        }
    }
    best
}

pub fn invariance_deviation(f: &dyn Fn(&SetBatch) -> Result<Tensor>, batch: &SetBatch, perms: &[Vec<usize>]) -> Result<f64> {
    let base = f(batch)?;
    Ok(invariance_worst(f, &base, batch, perms)?.0)
}

pub fn equivariance_deviation(f: &dyn Fn(&SetBatch) -> Result<Tensor>, batch: &SetBatch, perms: &[Vec<usize>]) -> Result<f64> {
    let base = f(batch)?;
    let expected = permute_tensor_elements(&base, batch.mask(), perms);
    let out = f(&batch.permute_elements(perms))?;
    Ok(worst_row(&expected, &out, batch.sets()).0)
}

/// Max over `n_perms` random permutations of `|f(πx) - f(x)|`.
pub fn invariance_check_fn(name: &str, f: &dyn Fn(&SetBatch) -> Result<Tensor>, batch: &SetBatch, opts: &PermOptions) -> Result<CheckReport> {
    let base = f(batch)?;
    let mut rng = SeededRng::new(opts.seed, Stream::Check, 0);
    let mut worst = (0.0f64, 0usize, 0usize, Vec::new());
    for trial in 0..opts.n_perms {
        let perms = random_perms(batch, &mut rng);
        let (d, set) = invariance_worst(f, &base, batch, &perms)?;
        if d > worst.0 || trial == 0 {
            worst = (d, trial, set, perms[set].clone());
        }
    }
    Ok(CheckReport::new(name, worst.0, opts.tolerance).with_counterexample(json!({
        "trial": worst.1,
        "set": worst.2,
        "permutation": worst.3,
        "deviation": worst.0,
    })))
}

/// Max over `n_perms` random permutations of `|f(πx) - π f(x)|` for a map
/// from `[N, M, D]` to `[N, M, D']`.
pub fn equivariance_check_fn(name: &str, f: &dyn Fn(&SetBatch) -> Result<Tensor>, batch: &SetBatch, opts: &PermOptions) -> Result<CheckReport> {
    let base = f(batch)?;
    let mut rng = SeededRng::new(opts.seed, Stream::Check, 1);
    let mut worst = (0.0f64, 0usize, 0usize, Vec::new());
    for trial in 0..opts.n_perms {
        let perms = random_perms(batch, &mut rng);
        let expected = permute_tensor_elements(&base, batch.mask(), &perms);
        let out = f(&batch.permute_elements(&perms))?;
        let (d, set) = worst_row(&expected, &out, batch.sets());
        if d > worst.0 || trial == 0 {
            worst = (d, trial, set, perms[set].clone());
        }
    }
    Ok(CheckReport::new(name, worst.0, opts.tolerance).with_counterexample(json!({
        "trial": worst.1,
        "set": worst.2,
        "permutation": worst.3,
        "deviation": worst.0,
    })))
}

pub fn invariance_check(model: &Model, batch: &SetBatch, opts: &PermOptions) -> Result<CheckReport> {
    let f = |b: &SetBatch| model.predict(b, opts.mode);
    invariance_check_fn("invariance", &f, batch, opts)
}

/// Equivariance of one encoder block whose parameters live in `store`.
pub fn equivariance_check(block: &Block, store: &ParamStore, batch: &SetBatch, opts: &PermOptions) -> Result<CheckReport> {
    let f = |b: &SetBatch| -> Result<Tensor> {
        let mut ctx = Ctx::new(store, opts.mode);
        let mask = b.mask_arc();
        let x = ctx.constant(b.tensor().clone())?;
        let y = block.forward(&mut ctx, x, mask.as_ref())?;
        Ok(ctx.tape.value(y).clone())
    };
    equivariance_check_fn("equivariance", &f, batch, opts)
}

/// Equivariance of a model's whole encoder.
pub fn encoder_equivariance_check(model: &Model, batch: &SetBatch, opts: &PermOptions) -> Result<CheckReport> {
    let f = |b: &SetBatch| model.encode_batch(b, opts.mode);
    equivariance_check_fn("equivariance", &f, batch, opts)
}
