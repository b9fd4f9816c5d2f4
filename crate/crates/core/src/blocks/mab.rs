use std::sync::Arc;

use crate::autodiff::{ParamId, Var};
use crate::blocks::attention::MultiHead;
use crate::blocks::linear::Linear;
use crate::blocks::residual::{apply_residual, ResidualKind};
use crate::error::{Error, Result};
use crate::norm::{NormKind, NormLayer, DEFAULT_EPS};
use crate::params::{normal_init, uniform_init, Ctx, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Mask;

fn norm_layer(store: &mut ParamStore, name: &str, kind: NormKind, d: usize) -> Result<Option<NormLayer>> {
    match kind {
        NormKind::None => Ok(None),
        k => NormLayer::new(store, name, k, d, DEFAULT_EPS).map(Some),
    }
}

fn maybe_norm(ctx: &mut Ctx, n: &Option<NormLayer>, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
    match n {
        Some(n) => n.forward(ctx, x, mask),
        None => Ok(x),
    }
}

fn mask_out(ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
    match mask {
        Some(m) => ctx.tape.mask_rows(x, m),
        None => Ok(x),
    }
}

/// Learned inducing points, broadcast across the batch on use.
#[derive(Clone, Debug, PartialEq)]
pub struct InducingPoints {
    pub p: ParamId,
    pub count: usize,
    pub d: usize,
}

impl InducingPoints {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, count: usize, d: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::config("inducing", "need at least one inducing point"));
        }
        let p = store.add(format!("{name}.p"), normal_init(rng, &[count, d], 1.0 / (d as f64).sqrt()));
        Ok(InducingPoints { p, count, d })
    }

    pub fn expand(&self, ctx: &mut Ctx, batch: usize) -> Result<Var> {
        let p = ctx.p(self.p)?;
        ctx.tape.broadcast_to(p, &[batch, self.count, self.d])
    }
}

/// Block whose skip starts at the projected query input:
/// `f = x W_Q + Attn(x, y, y)`, `out = f + relu(f W + b)`, with an optional
/// norm applied to `f` and to `out`.
#[derive(Clone, Debug, PartialEq)]
pub struct MabOriginal {
    pub wq: ParamId,
    pub attn: MultiHead,
    pub ff: Linear,
    pub norm_f: Option<NormLayer>,
    pub norm_out: Option<NormLayer>,
}

impl MabOriginal {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        d_x: usize,
        d_y: usize,
        d: usize,
        heads: usize,
        norm: NormKind,
    ) -> Result<Self> {
        let wq = store.add(format!("{name}.wq"), uniform_init(rng, &[d_x, d], d_x));
        let attn = MultiHead::new(store, rng, &format!("{name}.attn"), d_x, d_y, d, heads)?;
        let ff = Linear::new(store, rng, &format!("{name}.ff"), d, d, true);
        let norm_f = norm_layer(store, &format!("{name}.norm_f"), norm, d)?;
        let norm_out = norm_layer(store, &format!("{name}.norm_out"), norm, d)?;
        Ok(MabOriginal { wq, attn, ff, norm_f, norm_out })
    }

    pub fn param_count(d_x: usize, d_y: usize, d: usize, norm: NormKind) -> usize {
        let norms = if norm == NormKind::None { 0 } else { 4 * d };
        d_x * d + MultiHead::param_count(d_x, d_y, d) + Linear::param_count(d, d, true) + norms
    }

    pub fn forward(
        &self,
        ctx: &mut Ctx,
        x: Var,
        x_mask: Option<&Arc<Mask>>,
        y: Var,
        y_mask: Option<&Arc<Mask>>,
    ) -> Result<Var> {
        let wq = ctx.p(self.wq)?;
        let skip = ctx.tape.matmul(x, wq, false)?;
        let a = self.attn.forward(ctx, x, y, y, x_mask, y_mask)?;
        let f = ctx.tape.add(skip, a)?;
        let f = maybe_norm(ctx, &self.norm_f, f, x_mask)?;
        let h = self.ff.forward(ctx, f)?;
        let h = ctx.tape.relu(h)?;
        let out = ctx.tape.add(f, h)?;
        let out = maybe_norm(ctx, &self.norm_out, out, x_mask)?;
        mask_out(ctx, out, x_mask)
    }
}

/// `ISAB(x) = MAB(x, MAB(p, x))` with original blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct IsabOriginal {
    pub inducing: InducingPoints,
    pub mab_h: MabOriginal,
    pub mab_out: MabOriginal,
}

impl IsabOriginal {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        d_in: usize,
        d: usize,
        heads: usize,
        inducing: usize,
        norm: NormKind,
    ) -> Result<Self> {
        let inducing = InducingPoints::new(store, rng, name, inducing, d)?;
        let mab_h = MabOriginal::new(store, rng, &format!("{name}.mab0"), d, d_in, d, heads, norm)?;
        let mab_out = MabOriginal::new(store, rng, &format!("{name}.mab1"), d_in, d, d, heads, norm)?;
        Ok(IsabOriginal { inducing, mab_h, mab_out })
    }

    pub fn param_count(d_in: usize, d: usize, inducing: usize, norm: NormKind) -> usize {
        inducing * d + MabOriginal::param_count(d, d_in, d, norm) + MabOriginal::param_count(d_in, d, d, norm)
    }

    /// The induced summary `h = MAB(p, x)`; invariant to element order.
    pub fn summary(&self, ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let b = ctx.tape.shape(x)[0];
        let p = self.inducing.expand(ctx, b)?;
        self.mab_h.forward(ctx, p, None, x, mask)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let h = self.summary(ctx, x, mask)?;
        self.mab_out.forward(ctx, x, mask, h, None)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MabVariant {
    /// `h = x + Attn(x, SN(y), y)`: no norm on the query input.
    First,
    /// `h = x + Attn(SN(x), SN(y), y)`.
    Second,
}

/// Clean-path attention block: `h = x + Attn(..)`, `out = h + fcc(relu(SN(h)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct MabPP {
    pub variant: MabVariant,
    pub attn: MultiHead,
    pub norm_x: Option<NormLayer>,
    pub norm_y: Option<NormLayer>,
    pub norm_h: Option<NormLayer>,
    pub fcc: Linear,
    pub residual: ResidualKind,
}

impl MabPP {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        variant: MabVariant,
        d: usize,
        heads: usize,
        norm: NormKind,
        residual: ResidualKind,
    ) -> Result<Self> {
        let norm_x = match variant {
            MabVariant::First => None,
            MabVariant::Second => norm_layer(store, &format!("{name}.norm_x"), norm, d)?,
        };
        let norm_y = norm_layer(store, &format!("{name}.norm_y"), norm, d)?;
        let attn = MultiHead::new(store, rng, &format!("{name}.attn"), d, d, d, heads)?;
        let norm_h = norm_layer(store, &format!("{name}.norm_h"), norm, d)?;
        let fcc = Linear::new(store, rng, &format!("{name}.fcc"), d, d, false);
        Ok(MabPP { variant, attn, norm_x, norm_y, norm_h, fcc, residual })
    }

    pub fn param_count(variant: MabVariant, d: usize, norm: NormKind) -> usize {
        let norms = match (norm, variant) {
            (NormKind::None, _) => 0,
            (_, MabVariant::First) => 2 * 2 * d,
            (_, MabVariant::Second) => 3 * 2 * d,
        };
        MultiHead::param_count(d, d, d) + d * d + norms
    }

    pub fn forward(
        &self,
        ctx: &mut Ctx,
        x: Var,
        x_mask: Option<&Arc<Mask>>,
        y: Var,
        y_mask: Option<&Arc<Mask>>,
    ) -> Result<Var> {
        let q = maybe_norm(ctx, &self.norm_x, x, x_mask)?;
        let k = maybe_norm(ctx, &self.norm_y, y, y_mask)?;
        let a = self.attn.forward(ctx, q, k, y, x_mask, y_mask)?;
        let h = apply_residual(&mut ctx.tape, x, a, self.residual, x_mask)?;
        let r = maybe_norm(ctx, &self.norm_h, h, x_mask)?;
        let r = ctx.tape.relu(r)?;
        let r = self.fcc.forward(ctx, r)?;
        let out = apply_residual(&mut ctx.tape, h, r, self.residual, x_mask)?;
        mask_out(ctx, out, x_mask)
    }
}

/// `ISAB++(x) = MAB2(x, MAB1(p, x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct IsabPP {
    pub inducing: InducingPoints,
    pub mab1: MabPP,
    pub mab2: MabPP,
}

impl IsabPP {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        d: usize,
        heads: usize,
        inducing: usize,
        norm: NormKind,
        residual: ResidualKind,
    ) -> Result<Self> {
        let inducing = InducingPoints::new(store, rng, name, inducing, d)?;
        // the inducing points are learned, so the first block keeps a plain skip
        let mab1 = MabPP::new(store, rng, &format!("{name}.mab0"), MabVariant::First, d, heads, norm, ResidualKind::Erc)?;
        let mab2 = MabPP::new(store, rng, &format!("{name}.mab1"), MabVariant::Second, d, heads, norm, residual)?;
        Ok(IsabPP { inducing, mab1, mab2 })
    }

    pub fn param_count(d: usize, inducing: usize, norm: NormKind) -> usize {
        inducing * d + MabPP::param_count(MabVariant::First, d, norm) + MabPP::param_count(MabVariant::Second, d, norm)
    }

    pub fn summary(&self, ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let b = ctx.tape.shape(x)[0];
        let p = self.inducing.expand(ctx, b)?;
        self.mab1.forward(ctx, p, None, x, mask)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let h = self.summary(ctx, x, mask)?;
        self.mab2.forward(ctx, x, mask, h, None)
    }
}
