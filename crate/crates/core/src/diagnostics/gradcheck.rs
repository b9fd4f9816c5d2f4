use serde::{Deserialize, Serialize};

use super::CheckReport;
use crate::autodiff::{ParamId, Var};
use crate::data::TargetBatch;
use crate::error::Result;
use crate::model::Model;
use crate::params::{Ctx, Mode, ParamStore};
use crate::rng::{SeededRng, Stream};
use crate::tensor::SetBatch;
use crate::train::{loss_var, LossKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdOptions {
    pub h: f64,
    /// Coordinates sampled per parameter tensor.
    pub max_coords: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Smallest denominator of the relative error. Central differences carry
    /// roughly `eps * |loss| / h` of roundoff, so entries well below that
    /// resolution only pass with a floor above it.
    pub floor: f64,
    pub mode: Mode,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions { h: 1e-5, max_coords: 200, seed: 0, tolerance: 1e-5, floor: 1e-8, mode: Mode::Train }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdWorst {
    pub param: String,
    pub index: usize,
    pub autodiff: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    #[serde(flatten)]
    pub report: CheckReport,
    pub checked: usize,
    /// Coordinates whose perturbed loss was non-finite.
    pub skipped: usize,
    /// Largest `|g - g_fd|` over checked coordinates.
    pub max_abs_error: f64,
}

fn loss_value(store: &ParamStore, mode: Mode, f: &dyn Fn(&mut Ctx) -> Result<Var>) -> Result<f64> {
    let mut ctx = Ctx::new(store, mode);
    let l = f(&mut ctx)?;
    Ok(ctx.tape.value(l).item())
}

fn sample_coords(numel: usize, max: usize, seed: u64, id: ParamId) -> Vec<usize> {
    if numel <= max {
        return (0..numel).collect();
    }
    let mut rng = SeededRng::new(seed, Stream::Check, id.0 as u64);
    let mut idx: Vec<usize> = rng.permutation(numel)[..max].to_vec();
    idx.sort_unstable();
    idx
}

/// Central differences against reverse mode for a scalar loss built by `f`
/// from the parameters in `store`. The error per coordinate is
/// `|g - g_fd| / max(|g|, floor)`.
pub fn finite_diff_check_with(
    store: &ParamStore,
    f: &dyn Fn(&mut Ctx) -> Result<Var>,
    opts: &FdOptions,
) -> Result<FdReport> {
    let grads = {
        let mut ctx = Ctx::new(store, opts.mode);
        let l = f(&mut ctx)?;
        ctx.backward(l)?
    };
    let mut work = store.clone();
    let mut max_err = 0.0f64;
    let mut worst: Option<FdWorst> = None;
    let (mut checked, mut skipped, mut max_abs) = (0, 0, 0.0f64);
    for (id, g) in grads.iter() {
        for i in sample_coords(g.numel(), opts.max_coords, opts.seed, id) {
            let orig = work.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + opts.h;
            let plus = loss_value(&work, opts.mode, f)?;
            work.value_mut(id).data_mut()[i] = orig - opts.h;
            let minus = loss_value(&work, opts.mode, f)?;
            work.value_mut(id).data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                skipped += 1;
                continue;
            }
            checked += 1;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let ad = g.data()[i];
            max_abs = max_abs.max((ad - numeric).abs());
            let err = (ad - numeric).abs() / ad.abs().max(opts.floor);
            if err > max_err || err.is_nan() {
                max_err = if err.is_nan() { f64::INFINITY } else { err };
                worst = Some(FdWorst { param: store.get(id).name.clone(), index: i, autodiff: ad, numeric });
            }
        }
    }
    let report = CheckReport::new("gradcheck", max_err, opts.tolerance)
        .with_counterexample(serde_json::to_value(&worst).expect("plain struct"));
    Ok(FdReport { report, checked, skipped, max_abs_error: max_abs })
}

/// Gradient check of a full model's loss on one batch.
pub fn finite_diff_check(
    model: &Model,
    batch: &SetBatch,
    targets: &TargetBatch,
    kind: LossKind,
    opts: &FdOptions,
) -> Result<FdReport> {
    let f = |ctx: &mut Ctx| -> Result<Var> {
        let pred = model.forward(ctx, batch)?;
        loss_var(ctx, pred, targets, kind)
    };
    finite_diff_check_with(model.store(), &f, opts)
}
