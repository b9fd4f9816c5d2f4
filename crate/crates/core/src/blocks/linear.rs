use crate::autodiff::{ParamId, Var};
use crate::error::{Error, Result};
use crate::params::{uniform_init, Ctx, ParamStore};
use crate::rng::SeededRng;

/// `x W (+ b)` applied row-wise to the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let w = store.add(format!("{name}.w"), uniform_init(rng, &[d_in, d_out], d_in));
        let b = bias.then(|| store.add(format!("{name}.b"), uniform_init(rng, &[d_out], d_in)));
        Linear { w, b, d_in, d_out }
    }

    pub fn param_count(d_in: usize, d_out: usize, bias: bool) -> usize {
        d_in * d_out + if bias { d_out } else { 0 }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let last = ctx.tape.shape(x).last().copied();
        if last != Some(self.d_in) {
            return Err(Error::dim(format!(
                "linear expects {} input features, got shape {:?}",
                self.d_in,
                ctx.tape.shape(x)
            )));
        }
        let w = ctx.p(self.w)?;
        let y = ctx.tape.matmul(x, w, false)?;
        match self.b {
            Some(b) => {
                let b = ctx.p(b)?;
                ctx.tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}
