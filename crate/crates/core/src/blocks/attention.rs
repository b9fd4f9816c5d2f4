use std::sync::Arc;

use crate::autodiff::{ParamId, Var};
use crate::error::{Error, Result};
use crate::params::{uniform_init, Ctx, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Mask;

/// Multihead scaled dot-product attention.
///
/// Head `h` uses column block `h` of the query/key/value projections; the
/// softmax temperature is `sqrt(D)` with `D` the full model width.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHead {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub d: usize,
    pub d_q: usize,
    pub d_kv: usize,
}

impl MultiHead {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        d_q: usize,
        d_kv: usize,
        d: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::config("heads", format!("{heads} heads do not divide hidden width {d}")));
        }
        let wq = store.add(format!("{name}.wq"), uniform_init(rng, &[d_q, d], d_q));
        let wk = store.add(format!("{name}.wk"), uniform_init(rng, &[d_kv, d], d_kv));
        let wv = store.add(format!("{name}.wv"), uniform_init(rng, &[d_kv, d], d_kv));
        let wo = store.add(format!("{name}.wo"), uniform_init(rng, &[d, d], d));
        Ok(MultiHead { wq, wk, wv, wo, heads, d, d_q, d_kv })
    }

    pub fn param_count(d_q: usize, d_kv: usize, d: usize) -> usize {
        d_q * d + 2 * d_kv * d + d * d
    }

    /// `q: [B, Sq, d_q]`, `k, v: [B, Sk, d_kv]`. Padded keys are excluded
    /// from every softmax and padded query rows are zeroed.
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        q: Var,
        k: Var,
        v: Var,
        q_mask: Option<&Arc<Mask>>,
        kv_mask: Option<&Arc<Mask>>,
    ) -> Result<Var> {
        for (name, x, want) in [("query", q, self.d_q), ("key", k, self.d_kv), ("value", v, self.d_kv)] {
            let s = ctx.tape.shape(x);
            if s.len() != 3 || s[2] != want {
                return Err(Error::dim(format!("attention {name} expects [B, S, {want}], got {s:?}")));
            }
        }
        if ctx.tape.shape(k)[..2] != ctx.tape.shape(v)[..2] || ctx.tape.shape(q)[0] != ctx.tape.shape(k)[0] {
            return Err(Error::dim(format!(
                "attention batch/key mismatch: q {:?}, k {:?}, v {:?}",
                ctx.tape.shape(q),
                ctx.tape.shape(k),
                ctx.tape.shape(v)
            )));
        }
        let (wq, wk, wv, wo) = (ctx.p(self.wq)?, ctx.p(self.wk)?, ctx.p(self.wv)?, ctx.p(self.wo)?);
        let qp = ctx.tape.matmul(q, wq, false)?;
        let kp = ctx.tape.matmul(k, wk, false)?;
        let vp = ctx.tape.matmul(v, wv, false)?;
        let scale = 1.0 / (self.d as f64).sqrt();
        let dh = self.d / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (qp, kp, vp)
            } else {
                (
                    ctx.tape.narrow(qp, 2, h * dh, dh)?,
                    ctx.tape.narrow(kp, 2, h * dh, dh)?,
                    ctx.tape.narrow(vp, 2, h * dh, dh)?,
                )
            };
            let logits = ctx.tape.bmm(qh, kh, true)?;
            let a = ctx.tape.scaled_softmax(logits, scale, kv_mask.map(|m| m.as_ref()))?;
            outs.push(ctx.tape.bmm(a, vh, false)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { ctx.tape.concat(&outs, 2)? };
        let out = ctx.tape.matmul(cat, wo, false)?;
        match q_mask {
            Some(m) => ctx.tape.mask_rows(out, m),
            None => Ok(out),
        }
    }
}
