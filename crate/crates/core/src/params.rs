//! Flat parameter storage and the per-pass forward context.

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradMap, ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Encoder,
    Aggregation,
    Decoder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Index of the owning layer; increases from input to output.
    pub layer: usize,
    pub section: Section,
    /// `false` for non-learned buffers such as running statistics.
    pub trainable: bool,
}

/// Registry of every tensor a model owns, in construction order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    layer: usize,
    section: Section,
    started: bool,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            layer: 0,
            section: Section::Encoder,
            started: false,
        }
    }

    /// Open a new layer; subsequent parameters belong to it.
    pub fn begin_layer(&mut self, section: Section) -> usize {
        if self.started {
            self.layer += 1;
        }
        self.started = true;
        self.section = section;
        self.layer
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        self.started = true;
        self.entries.push(ParamEntry {
            name,
            value: value.with_requires_grad(trainable),
            layer: self.layer,
            section: self.section,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Number of learned scalars (buffers excluded).
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    /// Overwrite buffers with values computed during a forward pass.
    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor)>) -> Result<()> {
        for (id, t) in updates {
            let e = &mut self.entries[id.0];
            if e.value.shape() != t.shape() {
                return Err(Error::dim(format!("update for `{}` has shape {:?}", e.name, t.shape())));
            }
            e.value = t.with_requires_grad(e.trainable);
        }
        Ok(())
    }

    /// Scale every value of every trainable tensor whose name ends with `suffix`.
    pub fn scale_matching(&mut self, suffix: &str, factor: f64) -> usize {
        let mut n = 0;
        for e in self.entries.iter_mut().filter(|e| e.trainable && e.name.ends_with(suffix)) {
            e.value.data_mut().iter_mut().for_each(|v| *v *= factor);
            n += 1;
        }
        n
    }

    /// Set every trainable tensor to zero.
    pub fn zero_trainable(&mut self) {
        for e in self.entries.iter_mut().filter(|e| e.trainable) {
            e.value.data_mut().fill(0.0);
        }
    }
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` entries.
pub fn uniform_init(rng: &mut SeededRng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}

pub fn normal_init(rng: &mut SeededRng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.normal() * std).collect();
    Tensor::new(shape, data).expect("init shape")
}

/// State of one forward pass: the tape, lazily created parameter leaves,
/// buffer updates and soft warnings.
pub struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
    mode: Mode,
    updates: Vec<(ParamId, Tensor)>,
    warnings: Vec<String>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Ctx {
            tape: Tape::new(),
            store,
            vars: vec![None; store.len()],
            mode,
            updates: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// Tape handle of a stored tensor; trainable entries become gradient leaves.
    pub fn p(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.vars[id.0] {
            return Ok(v);
        }
        let e = self.store.get(id);
        let v = if e.trainable {
            self.tape.param(id, &e.value)?
        } else {
            self.tape.constant(e.value.clone())?
        };
        self.vars[id.0] = Some(v);
        Ok(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.tape.constant(t)
    }

    pub(crate) fn push_update(&mut self, id: ParamId, t: Tensor) {
        self.updates.push((id, t));
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn take_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.updates)
    }

    /// Reverse pass; every trainable entry of the store gets a gradient
    /// (zeros if unused by this pass).
    pub fn backward(&self, loss: Var) -> Result<GradMap> {
        let mut grads = self.tape.backward(loss)?.into_params();
        let mut missing = GradMap::default();
        for (i, e) in self.store.entries().iter().enumerate() {
            if e.trainable && grads.get(ParamId(i)).is_none() {
                missing.insert(ParamId(i), Tensor::zeros(e.value.shape()));
            }
        }
        grads.accumulate(missing);
        Ok(grads)
    }
}
