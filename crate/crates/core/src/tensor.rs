//! Dense row-major `f64` tensors of rank at most 3, plus the set-batch view
//! used by every equivariant layer.

use std::sync::Arc;

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return Err(Error::dim(format!("rank {} exceeds {MAX_RANK}", shape.len())));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.len() <= MAX_RANK, "rank {} exceeds {MAX_RANK}", shape.len());
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
            requires_grad: false,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            requires_grad: false,
        }
    }

    /// `n x n` identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.len() > MAX_RANK {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Shape left-padded with ones to rank 3.
    pub(crate) fn shape3(&self) -> [usize; 3] {
        pad3(&self.shape)
    }
}

pub(crate) fn pad3(shape: &[usize]) -> [usize; 3] {
    let mut out = [1usize; 3];
    let off = 3 - shape.len();
    out[off..].copy_from_slice(shape);
    out
}

/// Validity of each `(set, element)` slot of a zero-padded batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    sets: usize,
    elems: usize,
    valid: Vec<bool>,
}

impl Mask {
    pub fn new(sets: usize, elems: usize, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != sets * elems {
            return Err(Error::dim(format!(
                "mask of {sets}x{elems} needs {} flags, got {}",
                sets * elems,
                valid.len()
            )));
        }
        for n in 0..sets {
            if !valid[n * elems..(n + 1) * elems].iter().any(|&v| v) {
                return Err(Error::DegenerateInput(format!("set {n} has no valid element")));
            }
        }
        Ok(Mask { sets, elems, valid })
    }

    /// Mask where set `n` holds its first `lengths[n]` elements.
    pub fn from_lengths(lengths: &[usize], elems: usize) -> Result<Self> {
        let mut valid = vec![false; lengths.len() * elems];
        for (n, &len) in lengths.iter().enumerate() {
            if len > elems {
                return Err(Error::dim(format!("set {n} length {len} exceeds {elems}")));
            }
            valid[n * elems..n * elems + len].fill(true);
        }
        Self::new(lengths.len(), elems, valid)
    }

    pub fn sets(&self) -> usize {
        self.sets
    }

    pub fn elems(&self) -> usize {
        self.elems
    }

    #[inline]
    pub fn is_valid(&self, set: usize, elem: usize) -> bool {
        self.valid[set * self.elems + elem]
    }

    pub fn flags(&self) -> &[bool] {
        &self.valid
    }

    pub fn count(&self, set: usize) -> usize {
        self.valid[set * self.elems..(set + 1) * self.elems]
            .iter()
            .filter(|&&v| v)
            .count()
    }

    /// Indices of the valid elements of `set`, in order.
    pub fn valid_indices(&self, set: usize) -> Vec<usize> {
        (0..self.elems).filter(|&i| self.is_valid(set, i)).collect()
    }
}

/// A batch of zero-padded sets: an `N x M x D` tensor with an optional mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SetBatch {
    tensor: Tensor,
    mask: Option<Arc<Mask>>,
}

impl SetBatch {
    pub fn new(tensor: Tensor, mask: Option<Mask>) -> Result<Self> {
        if tensor.rank() != 3 {
            return Err(Error::dim(format!(
                "set batch must be rank 3, got shape {:?}",
                tensor.shape()
            )));
        }
        let [n, m, d] = tensor.shape3();
        if n == 0 || m == 0 || d == 0 {
            return Err(Error::dim(format!("empty set batch {:?}", tensor.shape())));
        }
        let mut tensor = tensor;
        if let Some(mask) = &mask {
            if mask.sets != n || mask.elems != m {
                return Err(Error::dim(format!(
                    "mask {}x{} does not match batch {n}x{m}",
                    mask.sets, mask.elems
                )));
            }
            // padded slots hold exactly zero
            let data = tensor.data_mut();
            for s in 0..n {
                for e in 0..m {
                    if !mask.is_valid(s, e) {
                        data[(s * m + e) * d..(s * m + e + 1) * d].fill(0.0);
                    }
                }
            }
        }
        Ok(SetBatch {
            tensor,
            mask: mask.map(Arc::new),
        })
    }

    pub fn dense(tensor: Tensor) -> Result<Self> {
        Self::new(tensor, None)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn mask(&self) -> Option<&Mask> {
        self.mask.as_deref()
    }

    pub fn mask_arc(&self) -> Option<Arc<Mask>> {
        self.mask.clone()
    }

    pub fn sets(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn elems(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn is_valid(&self, set: usize, elem: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m.is_valid(set, elem))
    }

    /// Rows `start..start + len` of the batch.
    pub fn slice_sets(&self, start: usize, len: usize) -> SetBatch {
        let [_, m, d] = self.tensor.shape3();
        let data = self.tensor.data()[start * m * d..(start + len) * m * d].to_vec();
        let mask = self.mask.as_ref().map(|mask| {
            Arc::new(Mask {
                sets: len,
                elems: m,
                valid: mask.valid[start * m..(start + len) * m].to_vec(),
            })
        });
        SetBatch {
            tensor: Tensor::new(&[len, m, d], data).expect("slice shape"),
            mask,
        }
    }

    /// Reorder the valid elements of each set: set `n` takes `perms[n]`, a
    /// permutation of its valid indices (padded slots stay in place).
    pub fn permute_elements(&self, perms: &[Vec<usize>]) -> SetBatch {
        let [n, m, d] = self.tensor.shape3();
        assert_eq!(perms.len(), n, "one permutation per set");
        let src = self.tensor.data();
        let mut out = src.to_vec();
        for (s, perm) in perms.iter().enumerate() {
            let slots: Vec<usize> = (0..m).filter(|&e| self.is_valid(s, e)).collect();
            assert_eq!(perm.len(), slots.len(), "permutation length for set {s}");
            for (dst_pos, &src_pos) in perm.iter().enumerate() {
                let (de, se) = (slots[dst_pos], slots[src_pos]);
                out[(s * m + de) * d..(s * m + de + 1) * d]
                    .copy_from_slice(&src[(s * m + se) * d..(s * m + se + 1) * d]);
            }
        }
        SetBatch {
            tensor: Tensor::new(&[n, m, d], out).expect("permute shape"),
            mask: self.mask.clone(),
        }
    }
}

/// Apply per-set element permutations (as produced for a `SetBatch`) to any
/// `N x M x D` tensor sharing the batch's mask.
pub fn permute_tensor_elements(t: &Tensor, mask: Option<&Mask>, perms: &[Vec<usize>]) -> Tensor {
    let batch = SetBatch {
        tensor: t.clone(),
        mask: mask.cloned().map(Arc::new),
    };
    batch.permute_elements(perms).into_tensor()
}
