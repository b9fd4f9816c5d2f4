//! Permutation-equivariant encoder blocks.

pub mod attention;
pub mod deepsets;
pub mod linear;
pub mod mab;
pub mod residual;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use attention::MultiHead;
pub use deepsets::{DsFeedforward, DsResidual, FreqAdd};
pub use linear::Linear;
pub use mab::{InducingPoints, IsabOriginal, IsabPP, MabOriginal, MabPP, MabVariant};
pub use residual::{apply_residual, ResidualKind};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::norm::NormKind;
use crate::params::{Ctx, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    DsFeedforward,
    DsResidualClean,
    DsResidualNonClean,
    FreqAdd,
    Isab,
    IsabPP,
}

impl BlockKind {
    pub fn is_attention(self) -> bool {
        matches!(self, BlockKind::Isab | BlockKind::IsabPP)
    }

    pub fn is_clean(self) -> bool {
        matches!(self, BlockKind::DsResidualClean | BlockKind::IsabPP)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub norm: NormKind,
    pub residual: ResidualKind,
    pub hidden: usize,
    /// Attention heads (attention kinds only).
    pub heads: Option<usize>,
    /// Inducing points (attention kinds only).
    pub inducing: Option<usize>,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, hidden: usize) -> Self {
        let attn = kind.is_attention();
        BlockSpec {
            kind,
            norm: match kind {
                BlockKind::DsFeedforward | BlockKind::Isab => NormKind::None,
                _ => NormKind::SetNorm,
            },
            residual: ResidualKind::Erc,
            hidden,
            heads: attn.then_some(4),
            inducing: attn.then_some(16),
        }
    }

    pub fn with_norm(mut self, norm: NormKind) -> Self {
        self.norm = norm;
        self
    }

    pub fn with_residual(mut self, residual: ResidualKind) -> Self {
        self.residual = residual;
        self
    }

    pub fn with_attention(mut self, heads: usize, inducing: usize) -> Self {
        self.heads = Some(heads);
        self.inducing = Some(inducing);
        self
    }

    pub fn validate(&self, d_in: usize) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be positive"));
        }
        if self.kind.is_attention() != (self.heads.is_some() && self.inducing.is_some()) {
            return Err(Error::config(
                "heads",
                format!("attention fields must be set exactly for attention blocks ({:?})", self.kind),
            ));
        }
        if let Some(h) = self.heads {
            if h == 0 || !self.hidden.is_multiple_of(h) {
                return Err(Error::config("heads", format!("{h} heads do not divide hidden width {}", self.hidden)));
            }
        }
        if self.inducing == Some(0) {
            return Err(Error::config("inducing", "need at least one inducing point"));
        }
        let needs_square = !matches!(self.kind, BlockKind::DsFeedforward | BlockKind::Isab);
        if needs_square && d_in != self.hidden {
            return Err(Error::config(
                "hidden",
                format!("{:?} needs input width {} to equal hidden width, got {d_in}", self.kind, self.hidden),
            ));
        }
        Ok(())
    }

    /// Scalars learned by a block built from this spec on `d_in` inputs.
    pub fn param_count(&self, d_in: usize) -> usize {
        let d = self.hidden;
        match self.kind {
            BlockKind::DsFeedforward => DsFeedforward::param_count(d_in, d, self.norm),
            BlockKind::DsResidualClean | BlockKind::DsResidualNonClean => DsResidual::param_count(d, self.norm),
            BlockKind::FreqAdd => FreqAdd::param_count(d, self.norm),
            BlockKind::Isab => IsabOriginal::param_count(d_in, d, self.inducing.unwrap_or(0), self.norm),
            BlockKind::IsabPP => IsabPP::param_count(d, self.inducing.unwrap_or(0), self.norm),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    DsFeedforward(DsFeedforward),
    DsResidual(DsResidual),
    FreqAdd(FreqAdd),
    Isab(IsabOriginal),
    IsabPP(IsabPP),
}

impl Block {
    pub fn build(store: &mut ParamStore, rng: &mut SeededRng, name: &str, spec: &BlockSpec, d_in: usize) -> Result<Self> {
        spec.validate(d_in)?;
        let d = spec.hidden;
        Ok(match spec.kind {
            BlockKind::DsFeedforward => Block::DsFeedforward(DsFeedforward::new(store, rng, name, d_in, d, spec.norm)?),
            BlockKind::DsResidualClean | BlockKind::DsResidualNonClean => Block::DsResidual(DsResidual::new(
                store,
                rng,
                name,
                d,
                spec.norm,
                spec.residual,
                spec.kind == BlockKind::DsResidualClean,
            )?),
            BlockKind::FreqAdd => Block::FreqAdd(FreqAdd::new(store, rng, name, d, spec.norm, spec.residual)?),
            BlockKind::Isab => Block::Isab(IsabOriginal::new(
                store,
                rng,
                name,
                d_in,
                d,
                spec.heads.unwrap_or(1),
                spec.inducing.unwrap_or(1),
                spec.norm,
            )?),
            BlockKind::IsabPP => Block::IsabPP(IsabPP::new(
                store,
                rng,
                name,
                d,
                spec.heads.unwrap_or(1),
                spec.inducing.unwrap_or(1),
                spec.norm,
                spec.residual,
            )?),
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        match self {
            Block::DsFeedforward(b) => b.forward(ctx, x, mask),
            Block::DsResidual(b) => b.forward(ctx, x, mask),
            Block::FreqAdd(b) => b.forward(ctx, x, mask),
            Block::Isab(b) => b.forward(ctx, x, mask),
            Block::IsabPP(b) => b.forward(ctx, x, mask),
        }
    }
}
