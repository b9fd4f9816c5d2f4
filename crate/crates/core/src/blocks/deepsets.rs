use std::sync::Arc;

use crate::autodiff::Var;
use crate::blocks::linear::Linear;
use crate::blocks::residual::{apply_residual, ResidualKind};
use crate::error::Result;
use crate::norm::{NormKind, NormLayer, DEFAULT_EPS};
use crate::params::{Ctx, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Mask;

fn opt_norm(store: &mut ParamStore, name: &str, kind: NormKind, d: usize) -> Result<Option<NormLayer>> {
    match kind {
        NormKind::None => Ok(None),
        k => NormLayer::new(store, name, k, d, DEFAULT_EPS).map(Some),
    }
}

fn norm_count(kind: NormKind, d: usize) -> usize {
    if kind == NormKind::None {
        0
    } else {
        2 * d
    }
}

fn apply_norm(ctx: &mut Ctx, n: &Option<NormLayer>, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
    match n {
        Some(n) => n.forward(ctx, x, mask),
        None => Ok(x),
    }
}

fn masked(ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
    match mask {
        Some(m) => ctx.tape.mask_rows(x, m),
        None => Ok(x),
    }
}

/// Element-wise `relu(Norm(x W + b))`; the bias is dropped when a norm follows.
#[derive(Clone, Debug, PartialEq)]
pub struct DsFeedforward {
    pub lin: Linear,
    pub norm: Option<NormLayer>,
}

impl DsFeedforward {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, d_in: usize, d: usize, norm: NormKind) -> Result<Self> {
        let lin = Linear::new(store, rng, &format!("{name}.lin"), d_in, d, norm == NormKind::None);
        let norm = opt_norm(store, &format!("{name}.norm"), norm, d)?;
        Ok(DsFeedforward { lin, norm })
    }

    pub fn param_count(d_in: usize, d: usize, norm: NormKind) -> usize {
        Linear::param_count(d_in, d, norm == NormKind::None) + norm_count(norm, d)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let h = self.lin.forward(ctx, x)?;
        let h = apply_norm(ctx, &self.norm, h, mask)?;
        let h = ctx.tape.relu(h)?;
        masked(ctx, h, mask)
    }
}

/// Two-layer residual block. The branch is
/// `f(x) = Norm(W1 relu(Norm(W2 x)))`; the clean arrangement returns
/// `x + f(x)`, the non-clean one `relu(x + f(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DsResidual {
    pub clean: bool,
    pub w2: Linear,
    pub n2: Option<NormLayer>,
    pub w1: Linear,
    pub n1: Option<NormLayer>,
    pub residual: ResidualKind,
}

impl DsResidual {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        d: usize,
        norm: NormKind,
        residual: ResidualKind,
        clean: bool,
    ) -> Result<Self> {
        let bias = norm == NormKind::None;
        let w2 = Linear::new(store, rng, &format!("{name}.w2"), d, d, bias);
        let n2 = opt_norm(store, &format!("{name}.n2"), norm, d)?;
        let w1 = Linear::new(store, rng, &format!("{name}.w1"), d, d, bias);
        let n1 = opt_norm(store, &format!("{name}.n1"), norm, d)?;
        Ok(DsResidual { clean, w2, n2, w1, n1, residual })
    }

    pub fn param_count(d: usize, norm: NormKind) -> usize {
        2 * (Linear::param_count(d, d, norm == NormKind::None) + norm_count(norm, d))
    }

    pub fn branch(&self, ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let h = self.w2.forward(ctx, x)?;
        let h = apply_norm(ctx, &self.n2, h, mask)?;
        let h = ctx.tape.relu(h)?;
        let h = self.w1.forward(ctx, h)?;
        let h = apply_norm(ctx, &self.n1, h, mask)?;
        masked(ctx, h, mask)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let f = self.branch(ctx, x, mask)?;
        let out = apply_residual(&mut ctx.tape, x, f, self.residual, mask)?;
        if self.clean {
            Ok(out)
        } else {
            ctx.tape.relu(out)
        }
    }
}

/// Single-layer residual unit `relu(x + Norm(W x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqAdd {
    pub lin: Linear,
    pub norm: Option<NormLayer>,
    pub residual: ResidualKind,
}

impl FreqAdd {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        d: usize,
        norm: NormKind,
        residual: ResidualKind,
    ) -> Result<Self> {
        let lin = Linear::new(store, rng, &format!("{name}.lin"), d, d, norm == NormKind::None);
        let norm = opt_norm(store, &format!("{name}.norm"), norm, d)?;
        Ok(FreqAdd { lin, norm, residual })
    }

    pub fn param_count(d: usize, norm: NormKind) -> usize {
        Linear::param_count(d, d, norm == NormKind::None) + norm_count(norm, d)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let f = self.lin.forward(ctx, x)?;
        let f = apply_norm(ctx, &self.norm, f, mask)?;
        let f = masked(ctx, f, mask)?;
        let out = apply_residual(&mut ctx.tape, x, f, self.residual, mask)?;
        ctx.tape.relu(out)
    }
}
