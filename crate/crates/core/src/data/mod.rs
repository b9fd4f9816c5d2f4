//! Synthetic set datasets and the `SETD` file format.

mod setd;

use serde::{Deserialize, Serialize};

pub use setd::{read_dataset, write_dataset, SETD_MAGIC, SETD_VERSION};

use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};
use crate::tensor::{SetBatch, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    NormalVar,
    ToyShapes,
}

fn default_mean_range() -> [f64; 2] {
    [-10.0, 10.0]
}

fn default_var_range() -> [f64; 2] {
    [0.0, 10.0]
}

fn default_classes() -> usize {
    4
}

fn default_noise() -> f64 {
    0.05
}

/// Everything a generator needs; generation is a pure function of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub task: Task,
    pub n_sets: usize,
    pub set_size: usize,
    pub seed: u64,
    /// Selects a disjoint family of per-set streams (e.g. 0 = train, 1 = test).
    #[serde(default)]
    pub split: u32,
    #[serde(default = "default_mean_range")]
    pub mean_range: [f64; 2],
    #[serde(default = "default_var_range")]
    pub var_range: [f64; 2],
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

impl GenSpec {
    pub fn new(task: Task, n_sets: usize, set_size: usize, seed: u64) -> Self {
        GenSpec {
            task,
            n_sets,
            set_size,
            seed,
            split: 0,
            mean_range: default_mean_range(),
            var_range: default_var_range(),
            classes: default_classes(),
            noise: default_noise(),
        }
    }

    pub fn with_split(mut self, split: u32) -> Self {
        self.split = split;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sets == 0 {
            return Err(Error::config("n_sets", "must be positive"));
        }
        if self.set_size == 0 {
            return Err(Error::config("set_size", "must be positive"));
        }
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        match self.task {
            Task::NormalVar => {
                if self.set_size < 2 {
                    return Err(Error::config("set_size", "variance needs at least two samples per set"));
                }
                if !ordered(self.mean_range) {
                    return Err(Error::config("mean_range", "must be an ordered finite pair"));
                }
                if !ordered(self.var_range) || self.var_range[0] < 0.0 {
                    return Err(Error::config("var_range", "must be an ordered non-negative pair"));
                }
            }
            Task::ToyShapes => {
                if !(1..=4).contains(&self.classes) {
                    return Err(Error::config("classes", format!("between 1 and 4 shape classes, got {}", self.classes)));
                }
                if !(self.noise.is_finite() && self.noise >= 0.0) {
                    return Err(Error::config("noise", "must be finite and non-negative"));
                }
            }
        }
        Ok(())
    }

    fn set_rng(&self, i: usize) -> SeededRng {
        SeededRng::new(self.seed, Stream::Data, ((self.split as u64) << 40) | i as u64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Row-major `N x T` regression targets.
    Values { width: usize, data: Vec<f64> },
    Classes { num_classes: usize, labels: Vec<u32> },
}

impl Targets {
    pub fn width(&self) -> usize {
        match self {
            Targets::Values { width, .. } => *width,
            Targets::Classes { .. } => 1,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, Targets::Classes { .. })
    }
}

/// Targets for one mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetBatch {
    Values(Tensor),
    Classes(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetDataset {
    inputs: Tensor,
    targets: Targets,
    metadata: serde_json::Value,
}

impl SetDataset {
    pub fn new(inputs: Tensor, targets: Targets, metadata: serde_json::Value) -> Result<Self> {
        if inputs.rank() != 3 || inputs.shape().contains(&0) {
            return Err(Error::dim(format!("dataset inputs must be N x M x D with N, M, D >= 1, got {:?}", inputs.shape())));
        }
        let n = inputs.shape()[0];
        match &targets {
            Targets::Values { width, data } => {
                if *width == 0 || data.len() != n * width {
                    return Err(Error::dim(format!("{} target values for {n} sets of width {width}", data.len())));
                }
            }
            Targets::Classes { num_classes, labels } => {
                if labels.len() != n {
                    return Err(Error::dim(format!("{} labels for {n} sets", labels.len())));
                }
                if let Some(l) = labels.iter().find(|&&l| l as usize >= *num_classes) {
                    return Err(Error::Contract(format!("label {l} outside [0, {num_classes})")));
                }
            }
        }
        Ok(SetDataset { inputs, targets, metadata })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn metadata(&self) -> &serde_json::Value {
        &self.metadata
    }

    pub fn n_sets(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn set_size(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.inputs.shape()[2]
    }

    /// Elements of set `i` as a row-major `M x D` slice.
    pub fn set(&self, i: usize) -> &[f64] {
        let w = self.set_size() * self.features();
        &self.inputs.data()[i * w..(i + 1) * w]
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(SetBatch, TargetBatch)> {
        let (m, d) = (self.set_size(), self.features());
        let mut x = Vec::with_capacity(indices.len() * m * d);
        for &i in indices {
            x.extend_from_slice(self.set(i));
        }
        let inputs = SetBatch::dense(Tensor::new(&[indices.len(), m, d], x)?)?;
        let targets = match &self.targets {
            Targets::Values { width, data } => {
                let mut t = Vec::with_capacity(indices.len() * width);
                for &i in indices {
                    t.extend_from_slice(&data[i * width..(i + 1) * width]);
                }
                TargetBatch::Values(Tensor::new(&[indices.len(), *width], t)?)
            }
            Targets::Classes { labels, .. } => TargetBatch::Classes(indices.iter().map(|&i| labels[i] as usize).collect()),
        };
        Ok((inputs, targets))
    }
}

/// Population (divide-by-`n`) variance.
pub fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Sets of scalar samples from `N(mu, v)` with `mu` and `v` drawn uniformly;
/// each target is the empirical variance of its own samples.
pub fn gen_normal_var(spec: &GenSpec) -> Result<SetDataset> {
    if spec.task != Task::NormalVar {
        return Err(Error::config("task", "expected normal_var"));
    }
    spec.validate()?;
    let (n, m) = (spec.n_sets, spec.set_size);
    let mut inputs = Vec::with_capacity(n * m);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = spec.set_rng(i);
        let mu = rng.uniform(spec.mean_range[0], spec.mean_range[1]);
        let var = rng.uniform(spec.var_range[0], spec.var_range[1]);
        let sd = var.sqrt();
        let start = inputs.len();
        inputs.extend((0..m).map(|_| mu + sd * rng.normal()));
        targets.push(population_variance(&inputs[start..]));
    }
    SetDataset::new(
        Tensor::new(&[n, m, 1], inputs)?,
        Targets::Values { width: 1, data: targets },
        serde_json::to_value(spec)?,
    )
}

/// The exact solution of the Normal Var task: each set's empirical variance.
pub fn oracle_normal_var(ds: &SetDataset) -> Vec<f64> {
    (0..ds.n_sets()).map(|i| population_variance(ds.set(i))).collect()
}

pub const TOY_SHAPE_NAMES: [&str; 4] = ["sphere", "cube", "two_cluster", "segment"];

fn sample_shape(rng: &mut SeededRng, class: usize, m: usize) -> Vec<f64> {
    let mut pts = Vec::with_capacity(m * 3);
    let unit = |rng: &mut SeededRng| loop {
        let v = [rng.normal(), rng.normal(), rng.normal()];
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if r > 1e-12 {
            return [v[0] / r, v[1] / r, v[2] / r];
        }
    };
    let axis = unit(rng);
    for _ in 0..m {
        let p = match class {
            0 => unit(rng),
            1 => {
                let face = rng.below(3);
                let mut p = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
                p[face] = if rng.below(2) == 0 { -1.0 } else { 1.0 };
                p
            }
            2 => {
                let s = if rng.below(2) == 0 { -2.0 } else { 2.0 };
                [
                    s * axis[0] + 0.3 * rng.normal(),
                    s * axis[1] + 0.3 * rng.normal(),
                    s * axis[2] + 0.3 * rng.normal(),
                ]
            }
            _ => {
                let t = rng.uniform(-1.0, 1.0);
                [t * axis[0], t * axis[1], t * axis[2]]
            }
        };
        pts.extend_from_slice(&p);
    }
    pts
}

fn standardize_axes(pts: &mut [f64]) {
    let m = pts.len() / 3;
    for k in 0..3 {
        let mean = (0..m).map(|j| pts[j * 3 + k]).sum::<f64>() / m as f64;
        let var = (0..m).map(|j| (pts[j * 3 + k] - mean).powi(2)).sum::<f64>() / m as f64;
        let sd = var.sqrt();
        for j in 0..m {
            let c = pts[j * 3 + k] - mean;
            pts[j * 3 + k] = if sd > 0.0 { c / sd } else { c };
        }
    }
}

/// Noisy point samples of simple 3-D shapes, each set standardized to zero
/// mean and unit variance per axis. Set `i` has class `i mod classes`.
pub fn gen_toy_shapes(spec: &GenSpec) -> Result<SetDataset> {
    if spec.task != Task::ToyShapes {
        return Err(Error::config("task", "expected toy_shapes"));
    }
    spec.validate()?;
    let (n, m) = (spec.n_sets, spec.set_size);
    let mut inputs = Vec::with_capacity(n * m * 3);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = spec.set_rng(i);
        let class = i % spec.classes;
        let mut pts = sample_shape(&mut rng, class, m);
        for v in pts.iter_mut() {
            *v += spec.noise * rng.normal();
        }
        standardize_axes(&mut pts);
        inputs.extend_from_slice(&pts);
        labels.push(class as u32);
    }
    SetDataset::new(
        Tensor::new(&[n, m, 3], inputs)?,
        Targets::Classes { num_classes: spec.classes, labels },
        serde_json::to_value(spec)?,
    )
}

pub fn generate(spec: &GenSpec) -> Result<SetDataset> {
    match spec.task {
        Task::NormalVar => gen_normal_var(spec),
        Task::ToyShapes => gen_toy_shapes(spec),
    }
}
