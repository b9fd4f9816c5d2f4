//! Normalization as standardization followed by transformation.
//!
//! A setting `(S, T)` names the sets of batch dimensions (`N` sets, `M`
//! elements, `D` features) along which standardization statistics and
//! transformation parameters are allowed to differ. Layer norm is
//! `({N,M}, {D})`, set norm `({N}, {D})` and feature norm `({D}, {D})`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Ctx, Mode, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::{Mask, SetBatch, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const FEATURE_NORM_MOMENTUM: f64 = 0.1;

/// Subset of the batch dimensions `{N, M, D}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct DimSet {
    pub n: bool,
    pub m: bool,
    pub d: bool,
}

impl DimSet {
    pub const EMPTY: DimSet = DimSet { n: false, m: false, d: false };
    pub const N: DimSet = DimSet { n: true, m: false, d: false };
    pub const M: DimSet = DimSet { n: false, m: true, d: false };
    pub const D: DimSet = DimSet { n: false, m: false, d: true };
    pub const NM: DimSet = DimSet { n: true, m: true, d: false };

    pub const fn new(n: bool, m: bool, d: bool) -> Self {
        DimSet { n, m, d }
    }

    /// All eight subsets, ordered by the bit pattern `NMD`.
    pub fn all() -> [DimSet; 8] {
        std::array::from_fn(|i| DimSet::new(i & 4 != 0, i & 2 != 0, i & 1 != 0))
    }

    /// Sizes of the statistics (or parameter) grid for a batch shape.
    pub fn group_dims(self, [n, m, d]: [usize; 3]) -> [usize; 3] {
        [
            if self.n { n } else { 1 },
            if self.m { m } else { 1 },
            if self.d { d } else { 1 },
        ]
    }

    /// Shape of transformation parameters for this `T`, with leading
    /// singleton axes dropped so that `{D}` gives a length-`D` vector and
    /// `{}` a scalar.
    pub fn param_shape(self, shape: [usize; 3]) -> Vec<usize> {
        let g = self.group_dims(shape);
        let first = if self.n {
            0
        } else if self.m {
            1
        } else if self.d {
            2
        } else {
            3
        };
        g[first..].to_vec()
    }
}

impl fmt::Display for DimSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.n, "N"), (self.m, "M"), (self.d, "D")]
            .into_iter()
            .filter_map(|(on, s)| on.then_some(s))
            .collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

impl From<DimSet> for String {
    fn from(d: DimSet) -> String {
        d.to_string()
    }
}

impl TryFrom<String> for DimSet {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        let inner = s.trim().trim_start_matches('{').trim_end_matches('}');
        let mut out = DimSet::EMPTY;
        for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "N" => out.n = true,
                "M" => out.m = true,
                "D" => out.d = true,
                other => return Err(format!("unknown dimension `{other}` in `{s}`")),
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormSetting {
    pub standardize: DimSet,
    pub transform: DimSet,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    None,
    LayerNorm,
    SetNorm,
    FeatureNorm,
}

impl NormKind {
    pub fn setting(self) -> Option<NormSetting> {
        let standardize = match self {
            NormKind::None => return None,
            NormKind::LayerNorm => DimSet::NM,
            NormKind::SetNorm => DimSet::N,
            NormKind::FeatureNorm => DimSet::D,
        };
        Some(NormSetting { standardize, transform: DimSet::D })
    }
}

/// Record `(a - mean) / (std + eps)` on the tape; see [`Tape::standardize`].
pub fn standardize_var(tape: &mut Tape, a: Var, s: DimSet, eps: f64, mask: Option<&Arc<Mask>>) -> Result<Var> {
    tape.standardize(a, s, eps, mask)
}

/// Record `a * gamma + beta` with parameters broadcast over dims outside `t`.
pub fn transform_var(tape: &mut Tape, a: Var, t: DimSet, gamma: Var, beta: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
    let shape = tape.shape(a).to_vec();
    if shape.len() != 3 {
        return Err(Error::dim(format!("transform expects N x M x D, got {shape:?}")));
    }
    let want = t.param_shape([shape[0], shape[1], shape[2]]);
    for (name, v) in [("gamma", gamma), ("beta", beta)] {
        if tape.shape(v) != want.as_slice() {
            return Err(Error::dim(format!(
                "{name} has shape {:?}, setting {t} needs {want:?}",
                tape.shape(v)
            )));
        }
    }
    let scaled = tape.mul(a, gamma)?;
    let out = tape.add(scaled, beta)?;
    match mask {
        Some(m) => tape.mask_rows(out, m),
        None => Ok(out),
    }
}

fn eval_on_batch(
    a: &SetBatch,
    f: impl FnOnce(&mut Tape, Var, Option<&Arc<Mask>>) -> Result<Var>,
) -> Result<SetBatch> {
    let mut tape = Tape::new();
    let mask = a.mask_arc();
    let x = tape.constant(a.tensor().clone())?;
    let y = f(&mut tape, x, mask.as_ref())?;
    let out = tape.value(y).clone();
    SetBatch::new(out, mask.map(|m| (*m).clone()))
}

/// Standardize a batch with population statistics over valid elements.
pub fn standardize(a: &SetBatch, s: DimSet, eps: f64) -> Result<SetBatch> {
    eval_on_batch(a, |tape, x, m| tape.standardize(x, s, eps, m))
}

pub fn transform(a: &SetBatch, t: DimSet, gamma: &Tensor, beta: &Tensor) -> Result<SetBatch> {
    eval_on_batch(a, |tape, x, m| {
        let g = tape.constant(gamma.clone())?;
        let b = tape.constant(beta.clone())?;
        transform_var(tape, x, t, g, b, m)
    })
}

/// Layer norm `({N,M}, {D})`; `eps = 0` selects the exact `0/0 := 0` path.
pub fn layer_norm(a: &SetBatch, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<SetBatch> {
    transform(&standardize(a, DimSet::NM, eps)?, DimSet::D, gamma, beta)
}

/// Set norm `({N}, {D})`: one scalar mean and std per set.
pub fn set_norm(a: &SetBatch, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<SetBatch> {
    transform(&standardize(a, DimSet::N, eps)?, DimSet::D, gamma, beta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct RunningStats {
    mean: ParamId,
    var: ParamId,
    steps: ParamId,
}

/// A normalization layer with its learned transformation parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NormLayer {
    kind: NormKind,
    setting: NormSetting,
    gamma: ParamId,
    beta: ParamId,
    eps: f64,
    running: Option<RunningStats>,
}

impl NormLayer {
    /// One of the three named norms over `d` features; `gamma = 1`, `beta = 0`.
    pub fn new(store: &mut ParamStore, name: &str, kind: NormKind, d: usize, eps: f64) -> Result<Self> {
        let setting = kind
            .setting()
            .ok_or_else(|| Error::config("norm", "NormKind::None has no layer"))?;
        if eps <= 0.0 {
            return Err(Error::config("eps", format!("must be positive, got {eps}")));
        }
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[d]));
        let running = (kind == NormKind::FeatureNorm).then(|| RunningStats {
            mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[d])),
            var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[d], 1.0)),
            steps: store.add_buffer(format!("{name}.num_batches"), Tensor::scalar(0.0)),
        });
        Ok(NormLayer { kind, setting, gamma, beta, eps, running })
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn setting(&self) -> NormSetting {
        self.setting
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let standardized = match (self.kind, ctx.mode()) {
            (NormKind::FeatureNorm, Mode::Train) => self.feature_train(ctx, x, mask)?,
            (NormKind::FeatureNorm, Mode::Eval) => self.feature_eval(ctx, x, mask)?,
            _ => {
                let y = ctx.tape.standardize(x, self.setting.standardize, self.eps, mask)?;
                if self.kind == NormKind::SetNorm {
                    self.flag_constant_sets(ctx, y, mask);
                }
                y
            }
        };
        let g = ctx.p(self.gamma)?;
        let b = ctx.p(self.beta)?;
        transform_var(&mut ctx.tape, standardized, self.setting.transform, g, b, mask)
    }

    fn flag_constant_sets(&self, ctx: &mut Ctx, y: Var, mask: Option<&Arc<Mask>>) {
        let t = ctx.tape.value(y);
        let [n, m, d] = [t.shape()[0], t.shape()[1], t.shape()[2]];
        let constant: Vec<usize> = (0..n)
            .filter(|&i| t.data()[i * m * d..(i + 1) * m * d].iter().all(|&v| v == 0.0))
            .filter(|&i| mask.is_none_or(|mk| mk.count(i) >= 1))
            .collect();
        if !constant.is_empty() {
            ctx.warn(format!("set norm: sets {constant:?} are constant; output equals beta"));
        }
    }

    fn feature_train(&self, ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let rs = self.running.expect("feature norm has running stats");
        let t = ctx.tape.value(x);
        let [n, m, d] = [t.shape()[0], t.shape()[1], t.shape()[2]];
        let mut count = 0usize;
        let mut sum = vec![0.0; d];
        for i in 0..n {
            for j in 0..m {
                if mask.is_none_or(|mk| mk.is_valid(i, j)) {
                    count += 1;
                    for (s, v) in sum.iter_mut().zip(&t.data()[(i * m + j) * d..(i * m + j + 1) * d]) {
                        *s += v;
                    }
                }
            }
        }
        if count < 2 {
            return Err(Error::DegenerateInput(format!(
                "feature norm in train mode needs >= 2 valid elements, got {count}"
            )));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; d];
        for i in 0..n {
            for j in 0..m {
                if mask.is_none_or(|mk| mk.is_valid(i, j)) {
                    for k in 0..d {
                        let c = t.data()[(i * m + j) * d + k] - mean[k];
                        var[k] += c * c;
                    }
                }
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let store = ctx.store();
        let mom = FEATURE_NORM_MOMENTUM;
        let blend = |old: &Tensor, new: &[f64]| {
            Tensor::vector(old.data().iter().zip(new).map(|(o, b)| (1.0 - mom) * o + mom * b).collect())
        };
        let new_mean = blend(store.value(rs.mean), &mean);
        let new_var = blend(store.value(rs.var), &var);
        let steps = store.value(rs.steps).item() + 1.0;
        ctx.push_update(rs.mean, new_mean);
        ctx.push_update(rs.var, new_var);
        ctx.push_update(rs.steps, Tensor::scalar(steps));
        ctx.tape.standardize(x, DimSet::D, self.eps, mask)
    }

    fn feature_eval(&self, ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let rs = self.running.expect("feature norm has running stats");
        let store = ctx.store();
        if store.value(rs.steps).item() == 0.0 {
            return Err(Error::Uninitialized("feature norm evaluated before any training step".into()));
        }
        let mean = store.value(rs.mean).clone();
        let inv = store.value(rs.var).map(|v| 1.0 / (v.sqrt() + self.eps));
        let mu = ctx.constant(mean)?;
        let s = ctx.constant(inv)?;
        let c = ctx.tape.sub(x, mu)?;
        let y = ctx.tape.mul(c, s)?;
        match mask {
            Some(mk) => ctx.tape.mask_rows(y, mk),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub equivariant: bool,
    pub batch_agnostic: bool,
}

const CERT_TRIALS: usize = 32;
const CERT_SEED: u64 = 0x5e7_c0de;
const CERT_TOL: f64 = 1e-12;

/// Randomized search for a counterexample to permutation equivariance
/// (element reordering) and batch agnosticism (set reordering) of the
/// transformation with parameters varying along `t`.
pub fn certify_transform_setting(t: DimSet) -> Certificate {
    let shape = [4usize, 5, 3];
    let mut rng = SeededRng::from_seed(CERT_SEED);
    let mut cert = Certificate { equivariant: true, batch_agnostic: true };
    let pshape = t.param_shape(shape);
    let numel: usize = shape.iter().product();
    for _ in 0..CERT_TRIALS {
        let x = Tensor::new(&shape, (0..numel).map(|_| rng.normal()).collect()).expect("shape");
        // distinct values along every axis of T
        let gamma = Tensor::new(&pshape, (0..pshape.iter().product()).map(|_| rng.uniform(0.5, 2.0)).collect()).expect("shape");
        let beta = Tensor::new(&pshape, (0..pshape.iter().product()).map(|_| rng.normal()).collect()).expect("shape");
        let batch = SetBatch::dense(x).expect("dense batch");
        let apply = |b: &SetBatch| transform(b, t, &gamma, &beta).expect("transform");
        let base = apply(&batch);

        if cert.equivariant {
            let perms: Vec<Vec<usize>> = (0..shape[0]).map(|_| derangement(&mut rng, shape[1])).collect();
            let lhs = apply(&batch.permute_elements(&perms));
            let rhs = base.permute_elements(&perms);
            if lhs.tensor().max_abs_diff(rhs.tensor()) > CERT_TOL {
                cert.equivariant = false;
            }
        }
        if cert.batch_agnostic {
            let order = derangement(&mut rng, shape[0]);
            let lhs = apply(&permute_sets(&batch, &order));
            let rhs = permute_sets(&base, &order);
            if lhs.tensor().max_abs_diff(rhs.tensor()) > CERT_TOL {
                cert.batch_agnostic = false;
            }
        }
        if !cert.equivariant && !cert.batch_agnostic {
            break;
        }
    }
    cert
}

fn derangement(rng: &mut SeededRng, n: usize) -> Vec<usize> {
    loop {
        let p = rng.permutation(n);
        if n < 2 || p.iter().enumerate().all(|(i, &j)| i != j) {
            return p;
        }
    }
}

/// Reorder whole sets: output set `i` is input set `order[i]`.
pub fn permute_sets(b: &SetBatch, order: &[usize]) -> SetBatch {
    let [n, m, d] = [b.sets(), b.elems(), b.features()];
    assert_eq!(order.len(), n);
    let src = b.tensor().data();
    let mut out = Vec::with_capacity(src.len());
    let mut flags = Vec::with_capacity(n * m);
    for &o in order {
        out.extend_from_slice(&src[o * m * d..(o + 1) * m * d]);
        flags.extend((0..m).map(|j| b.is_valid(o, j)));
    }
    let mask = b.mask().map(|_| Mask::new(n, m, flags).expect("mask"));
    SetBatch::new(Tensor::new(&[n, m, d], out).expect("shape"), mask).expect("batch")
}
