use serde::{Deserialize, Serialize};

use crate::data::TargetBatch;
use crate::error::Result;
use crate::model::{Family, Model, ModelConfig};
use crate::params::{Mode, Section};
use crate::tensor::SetBatch;
use crate::train::{batch_gradients, LossKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub layer_index: usize,
    pub section: Section,
    pub param: String,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGradNorm {
    pub layer_index: usize,
    pub section: Section,
    pub grad_norm: f64,
}

/// Gradient norms of a freshly initialized model after one backward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradProfile {
    pub family: Family,
    pub depth: usize,
    pub seed: u64,
    pub loss: f64,
    /// Every trainable tensor, in registry order.
    pub entries: Vec<ProfileEntry>,
    /// L2 norm over all tensors of each layer, in layer order.
    pub layers: Vec<LayerGradNorm>,
}

impl GradProfile {
    pub fn encoder_layers(&self) -> impl Iterator<Item = &LayerGradNorm> {
        self.layers.iter().filter(|l| l.section == Section::Encoder)
    }

    pub fn first_encoder_norm(&self) -> f64 {
        self.encoder_layers().next().map_or(0.0, |l| l.grad_norm)
    }

    pub fn last_encoder_norm(&self) -> f64 {
        self.encoder_layers().last().map_or(0.0, |l| l.grad_norm)
    }

    /// First over last encoder layer norm.
    pub fn first_last_ratio(&self) -> f64 {
        self.first_encoder_norm() / self.last_encoder_norm()
    }
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Build `config` with `seed`, run one forward/backward on the batch and
/// record gradient norms. Non-finite norms are reported as `+inf`.
pub fn grad_profile(config: &ModelConfig, batch: &SetBatch, targets: &TargetBatch, kind: LossKind, seed: u64) -> Result<GradProfile> {
    let config = config.clone().with_seed(seed);
    let model = Model::build(&config)?;
    let step = batch_gradients(&model, batch, targets, kind, Mode::Train, 8)?;
    let store = model.store();
    let mut entries = Vec::new();
    let mut layers: Vec<(LayerGradNorm, f64)> = Vec::new();
    for (id, g) in step.grads.iter() {
        let e = store.get(id);
        let sq: f64 = g.data().iter().map(|v| v * v).sum();
        entries.push(ProfileEntry {
            layer_index: e.layer,
            section: e.section,
            param: e.name.clone(),
            grad_norm: finite_or_inf(sq.sqrt()),
        });
        match layers.last_mut() {
            Some((l, acc)) if l.layer_index == e.layer => *acc += sq,
            _ => layers.push((LayerGradNorm { layer_index: e.layer, section: e.section, grad_norm: 0.0 }, sq)),
        }
    }
    let layers = layers
        .into_iter()
        .map(|(mut l, sq)| {
            l.grad_norm = finite_or_inf(sq.sqrt());
            l
        })
        .collect();
    Ok(GradProfile { family: config.family, depth: config.encoder_depth, seed, loss: step.loss, entries, layers })
}
