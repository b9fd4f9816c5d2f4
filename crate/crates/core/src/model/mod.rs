//! Full networks: equivariant encoder, pooling, decoder.

mod checkpoint;
mod config;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Aggregation, Family, ModelConfig, TaskHead};

use crate::autodiff::{ParamId, Reduction, Var};
use crate::blocks::{Block, BlockSpec, InducingPoints, Linear, MabOriginal};
use crate::error::{Error, Result};
use crate::norm::{NormKind, NormLayer, DEFAULT_EPS};
use crate::params::{Ctx, Mode, ParamStore, Section};
use crate::rng::{SeededRng, Stream};
use crate::tensor::{Mask, SetBatch, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderLayer {
    /// Width change into the hidden dimension; bias-free when a norm follows.
    Projection(Linear),
    Block(Block),
    /// Closing `linear(relu(norm(x)))` of the Deep Sets++ encoder.
    Tail { norm: Option<NormLayer>, lin: Linear },
}

#[derive(Clone, Debug, PartialEq)]
enum Pool {
    Sum,
    Max,
    Positional,
    Pma { seed: InducingPoints, mab: MabOriginal },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub id: ParamId,
    pub name: String,
    pub shape: Vec<usize>,
    pub layer_index: usize,
    pub section: Section,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    encoder: Vec<EncoderLayer>,
    pool: Pool,
    decoder: Vec<Linear>,
}

impl Model {
    pub fn build(config: &ModelConfig) -> Result<Model> {
        let c = config.resolved()?;
        let mut rng = SeededRng::new(c.seed, Stream::Init, 0);
        let mut store = ParamStore::new();
        let d = c.hidden;
        let norm = c.norm();
        let mut encoder = Vec::with_capacity(c.encoder_depth + 2);
        let mut width = c.input_dim;

        let spec = BlockSpec {
            kind: c.block(),
            norm,
            residual: c.residual(),
            hidden: d,
            heads: c.family.is_transformer().then_some(c.heads),
            inducing: c.family.is_transformer().then_some(c.inducing),
        };
        if matches!(c.family, Family::DeepSetsPp | Family::SetTransformerPp) {
            store.begin_layer(Section::Encoder);
            let lin = Linear::new(&mut store, &mut rng, "enc0.proj", width, d, norm == NormKind::None);
            encoder.push(EncoderLayer::Projection(lin));
            width = d;
        }
        for _ in 0..c.encoder_depth {
            let idx = store.begin_layer(Section::Encoder);
            let block = Block::build(&mut store, &mut rng, &format!("enc{idx}"), &spec, width)?;
            encoder.push(EncoderLayer::Block(block));
            width = d;
        }
        if c.family == Family::DeepSetsPp {
            let idx = store.begin_layer(Section::Encoder);
            let n = match norm {
                NormKind::None => None,
                k => Some(NormLayer::new(&mut store, &format!("enc{idx}.norm"), k, d, DEFAULT_EPS)?),
            };
            let lin = Linear::new(&mut store, &mut rng, &format!("enc{idx}.lin"), d, d, true);
            encoder.push(EncoderLayer::Tail { norm: n, lin });
        }

        let pool = match c.aggregation() {
            Aggregation::Sum if c.family == Family::PositionalProbe => Pool::Positional,
            Aggregation::Sum => Pool::Sum,
            Aggregation::Max => Pool::Max,
            Aggregation::Pma => {
                let idx = store.begin_layer(Section::Aggregation);
                let seed = InducingPoints::new(&mut store, &mut rng, &format!("pool{idx}.seed"), 1, d)?;
                let mab = MabOriginal::new(&mut store, &mut rng, &format!("pool{idx}.mab"), d, d, d, c.heads, NormKind::None)?;
                Pool::Pma { seed, mab }
            }
        };

        let mut decoder = Vec::with_capacity(c.decoder_widths.len() + 1);
        for &w in c.decoder_widths.iter().chain(std::iter::once(&c.output_dim)) {
            let idx = store.begin_layer(Section::Decoder);
            decoder.push(Linear::new(&mut store, &mut rng, &format!("dec{idx}"), width, w, true));
            width = w;
        }

        if c.wq_scale != 1.0 {
            store.scale_matching(".wq", c.wq_scale);
        }
        Ok(Model { config: c, store, encoder, pool, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &[EncoderLayer] {
        &self.encoder
    }

    /// Whether any layer couples the sets of a batch (feature norm).
    pub fn batch_coupled(&self) -> bool {
        self.config.norm() == NormKind::FeatureNorm
    }

    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    /// Closed-form count of learned scalars for a config.
    pub fn expected_param_count(config: &ModelConfig) -> Result<usize> {
        let c = config.resolved()?;
        let d = c.hidden;
        let norm = c.norm();
        let norm_params = if norm == NormKind::None { 0 } else { 2 * d };
        let spec = BlockSpec {
            kind: c.block(),
            norm,
            residual: c.residual(),
            hidden: d,
            heads: c.family.is_transformer().then_some(c.heads),
            inducing: c.family.is_transformer().then_some(c.inducing),
        };
        let mut total = 0;
        let mut width = c.input_dim;
        if matches!(c.family, Family::DeepSetsPp | Family::SetTransformerPp) {
            total += Linear::param_count(width, d, norm == NormKind::None);
            width = d;
        }
        for _ in 0..c.encoder_depth {
            total += spec.param_count(width);
            width = d;
        }
        if c.family == Family::DeepSetsPp {
            total += norm_params + Linear::param_count(d, d, true);
        }
        if c.aggregation() == Aggregation::Pma {
            total += d + MabOriginal::param_count(d, d, d, NormKind::None);
        }
        for &w in c.decoder_widths.iter().chain(std::iter::once(&c.output_dim)) {
            total += Linear::param_count(width, w, true);
            width = w;
        }
        Ok(total)
    }

    pub fn parameter_registry(&self) -> Vec<RegistryEntry> {
        self.store
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| RegistryEntry {
                id: ParamId(i),
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                layer_index: e.layer,
                section: e.section,
                trainable: e.trainable,
            })
            .collect()
    }

    /// Layer indices of the encoder, in order.
    pub fn encoder_layers(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .store
            .entries()
            .iter()
            .filter(|e| e.section == Section::Encoder)
            .map(|e| e.layer)
            .collect();
        v.dedup();
        v
    }

    /// Equivariant encoder applied to a `[N, M, input_dim]` variable.
    pub fn encode(&self, ctx: &mut Ctx, x: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let s = ctx.tape.shape(x);
        if s.len() != 3 || s[2] != self.config.input_dim {
            return Err(Error::dim(format!(
                "model expects [N, M, {}] inputs, got {s:?}",
                self.config.input_dim
            )));
        }
        let mut h = x;
        for layer in &self.encoder {
            h = match layer {
                EncoderLayer::Projection(lin) => {
                    let y = lin.forward(ctx, h)?;
                    match mask {
                        Some(m) => ctx.tape.mask_rows(y, m)?,
                        None => y,
                    }
                }
                EncoderLayer::Block(b) => b.forward(ctx, h, mask)?,
                EncoderLayer::Tail { norm, lin } => {
                    let y = match norm {
                        Some(n) => n.forward(ctx, h, mask)?,
                        None => h,
                    };
                    let y = ctx.tape.relu(y)?;
                    let y = lin.forward(ctx, y)?;
                    match mask {
                        Some(m) => ctx.tape.mask_rows(y, m)?,
                        None => y,
                    }
                }
            };
        }
        Ok(h)
    }

    /// Invariant pooling of encoder output to `[N, D]`.
    pub fn aggregate(&self, ctx: &mut Ctx, h: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        match &self.pool {
            Pool::Sum => ctx.tape.reduce(h, 1, Reduction::Sum, mask),
            Pool::Max => ctx.tape.reduce(h, 1, Reduction::Max, mask),
            Pool::Positional => {
                let m = ctx.tape.shape(h)[1];
                let w = Tensor::new(&[m, 1], (1..=m).map(|j| j as f64).collect())?;
                let w = ctx.constant(w)?;
                let weighted = ctx.tape.mul(h, w)?;
                ctx.tape.reduce(weighted, 1, Reduction::Sum, mask)
            }
            Pool::Pma { seed, mab } => {
                let [b, d] = [ctx.tape.shape(h)[0], ctx.tape.shape(h)[2]];
                let s = seed.expand(ctx, b)?;
                let out = mab.forward(ctx, s, None, h, mask)?;
                ctx.tape.reshape(out, &[b, d])
            }
        }
    }

    pub fn decode(&self, ctx: &mut Ctx, z: Var) -> Result<Var> {
        let mut h = z;
        let last = self.decoder.len() - 1;
        for (i, lin) in self.decoder.iter().enumerate() {
            h = lin.forward(ctx, h)?;
            if i < last {
                h = ctx.tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Predictions (`[N, output_dim]`; logits for classification).
    pub fn forward(&self, ctx: &mut Ctx, batch: &SetBatch) -> Result<Var> {
        let mask = batch.mask_arc();
        let x = ctx.constant(batch.tensor().clone())?;
        let h = self.encode(ctx, x, mask.as_ref())?;
        let z = self.aggregate(ctx, h, mask.as_ref())?;
        self.decode(ctx, z)
    }

    pub fn predict(&self, batch: &SetBatch, mode: Mode) -> Result<Tensor> {
        let mut ctx = Ctx::new(&self.store, mode);
        let y = self.forward(&mut ctx, batch)?;
        Ok(ctx.tape.value(y).clone())
    }

    /// Encoder output as a plain tensor.
    pub fn encode_batch(&self, batch: &SetBatch, mode: Mode) -> Result<Tensor> {
        let mut ctx = Ctx::new(&self.store, mode);
        let mask = batch.mask_arc();
        let x = ctx.constant(batch.tensor().clone())?;
        let h = self.encode(&mut ctx, x, mask.as_ref())?;
        Ok(ctx.tape.value(h).clone())
    }
}
