//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied during one forward pass.
//! [`Tape::backward`] walks the record in reverse and returns exact gradients
//! for every leaf. Tapes are single-threaded and rebuilt per forward pass.

mod kernels;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norm::DimSet;
use crate::tensor::{Mask, Tensor};

pub(crate) use kernels::gemm;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stable identifier of a model parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Reduce {
        a: Var,
        axis: usize,
        argmax: Vec<usize>,
        counts: Vec<usize>,
        kind: Reduction,
        mask: Option<Arc<Mask>>,
    },
    Broadcast(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { a: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
    ScaledSoftmax { a: Var, scale: f64 },
    Standardize {
        a: Var,
        setting: DimSet,
        group_dims: [usize; 3],
        mean: Vec<f64>,
        std: Vec<f64>,
        counts: Vec<usize>,
        eps: f64,
        mask: Option<Arc<Mask>>,
    },
    MaskRows { a: Var, mask: Arc<Mask> },
    SumAll(Var),
    MeanAll(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("NaN in {what}")));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Record a leaf. Its gradient is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        check_finite(&t, "leaf tensor")?;
        let g = t.requires_grad();
        Ok(self.push(t, Op::Leaf, g))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t.with_requires_grad(false))
    }

    /// Record a trainable parameter leaf; it always receives a gradient entry.
    pub fn param(&mut self, id: ParamId, t: &Tensor) -> Result<Var> {
        let v = self.leaf(t.clone().with_requires_grad(true))?;
        self.params.push((id, v));
        Ok(v)
    }

    /// `a · b` (or `a · bᵀ`) with `a` of shape `[.., m, k]` and a shared
    /// rank-2 `b`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 {
            return Err(Error::dim(format!("matmul expects [..,m,k] x [k,n], got {sa:?} x {sb:?}")));
        }
        let k = *sa.last().unwrap();
        let (bk, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != bk {
            return Err(Error::dim(format!("matmul inner dims {sa:?} x {sb:?} (trans_b={trans_b})")));
        }
        let rows = self.value(a).numel() / k.max(1);
        let mut out = vec![0.0; rows * n];
        let bstride = if trans_b { (1, k) } else { (n, 1) };
        gemm(rows, k, n, 1.0, self.value(a).data(), (k, 1), self.value(b).data(), bstride, 0.0, &mut out, n);
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul { a, b, trans_b }, g))
    }

    /// Batched `[B,m,k] · [B,k,n]` (or `· [B,n,k]ᵀ`).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::dim(format!("bmm expects [B,m,k] x [B,k,n], got {sa:?} x {sb:?}")));
        }
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let (bk, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != bk {
            return Err(Error::dim(format!("bmm inner dims {sa:?} x {sb:?} (trans_b={trans_b})")));
        }
        let mut out = vec![0.0; bs * m * n];
        let bstride = if trans_b { (1, k) } else { (n, 1) };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                1.0,
                &av[i * m * k..(i + 1) * m * k],
                (k, 1),
                &bv[i * k * n..(i + 1) * k * n],
                bstride,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
                n,
            );
        }
        let g = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(&[bs, m, n], out)?, Op::BatchMatMul { a, b, trans_b }, g))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = kernels::broadcast_shape(ta.shape(), tb.shape())?;
        let data = kernels::binary_broadcast(ta.data(), ta.shape(), tb.data(), tb.shape(), &shape, f);
        Tensor::new(&shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x + y)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x - y)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), g))
    }

    /// Elementwise (broadcasting) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x * y)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a).map(|v| v * c);
        let g = self.any_grad(&[a]);
        Ok(self.push(t, Op::Scale(a, c), g))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let g = self.any_grad(&[a]);
        Ok(self.push(t, Op::Relu(a), g))
    }

    /// Reduce `axis` away. With a mask (rank-3 input only), padded
    /// `(set, element)` slots are ignored; max uses a −∞ sentinel internally
    /// and routes gradient to the first arg-max on ties.
    pub fn reduce(&mut self, a: Var, axis: usize, kind: Reduction, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("reduce axis {axis} out of range for {shape:?}")));
        }
        if let Some(m) = mask {
            if shape.len() != 3 || m.sets() != shape[0] || m.elems() != shape[1] {
                return Err(Error::dim(format!("mask {}x{} does not fit {shape:?}", m.sets(), m.elems())));
            }
        }
        let (outer, len, inner) = kernels::split_axis(&shape, axis);
        let src = self.value(a).data();
        let n_out = outer * inner;
        let mut out = vec![0.0; n_out];
        let mut counts = vec![0usize; n_out];
        let mut argmax = if kind == Reduction::Max { vec![usize::MAX; n_out] } else { Vec::new() };
        if kind == Reduction::Max {
            out.fill(f64::NEG_INFINITY);
        }
        let d_last = shape.last().copied().unwrap_or(1);
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    let flat = (o * len + l) * inner + i;
                    if let Some(m) = mask {
                        let slot = flat / d_last;
                        if !m.flags()[slot] {
                            continue;
                        }
                    }
                    let oi = o * inner + i;
                    let v = src[flat];
                    counts[oi] += 1;
                    match kind {
                        Reduction::Sum | Reduction::Mean => out[oi] += v,
                        Reduction::Max => {
                            if v > out[oi] || argmax[oi] == usize::MAX {
                                out[oi] = v;
                                argmax[oi] = flat;
                            }
                        }
                    }
                }
            }
        }
        for (oi, v) in out.iter_mut().enumerate() {
            match kind {
                Reduction::Mean if counts[oi] > 0 => *v /= counts[oi] as f64,
                Reduction::Max if counts[oi] == 0 => *v = 0.0,
                _ => {}
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let g = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Reduce { a, axis, argmax, counts, kind, mask: mask.cloned() },
            g,
        ))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(a).to_vec();
        let out = kernels::broadcast_shape(&src, shape)?;
        if out != shape {
            return Err(Error::dim(format!("cannot broadcast {src:?} to {shape:?}")));
        }
        let ones = vec![0.0; shape.iter().product()];
        let data = kernels::binary_broadcast(self.value(a).data(), &src, &ones, shape, shape, |x, _| x);
        let g = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Broadcast(a), g))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| Error::dim("concat of nothing"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim(format!("concat axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(Error::dim(format!("concat shape {s:?} vs {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                out.extend_from_slice(&self.value(v).data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let g = self.any_grad(inputs);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis }, g))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::dim(format!("narrow {start}+{len} on axis {axis} of {shape:?}")));
        }
        let (outer, full, inner) = kernels::split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut s = shape;
        s[axis] = len;
        let g = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(&s, out)?, Op::Narrow { a, axis, start }, g))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(Error::dim(format!("transpose needs rank >= 2, got {shape:?}")));
        }
        let t = transpose_last2(self.value(a).data(), &shape);
        let mut s = shape;
        let r = s.len();
        s.swap(r - 1, r - 2);
        let g = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(&s, t)?, Op::Transpose(a), g))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().with_requires_grad(false).reshape(shape)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(t, Op::Reshape(a), g))
    }

    /// `softmax(scale · a)` over the last axis. A key mask (`[B, S_k]` for an
    /// input `[B, S_q, S_k]`) gives padded keys −∞ logits.
    pub fn scaled_softmax(&mut self, a: Var, scale: f64, key_mask: Option<&Mask>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let last = *shape.last().ok_or_else(|| Error::dim("softmax of a scalar"))?;
        if last == 0 {
            return Err(Error::dim("softmax axis of size 0"));
        }
        if let Some(m) = key_mask {
            if shape.len() != 3 || m.sets() != shape[0] || m.elems() != last {
                return Err(Error::dim(format!("key mask {}x{} does not fit {shape:?}", m.sets(), m.elems())));
            }
        }
        let rows_per_batch = if shape.len() == 3 { shape[1] } else { 1 };
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for (r, (row, dst)) in src.chunks_exact(last).zip(out.chunks_exact_mut(last)).enumerate() {
            let valid = |j: usize| key_mask.is_none_or(|m| m.is_valid(r / rows_per_batch, j));
            let mut mx = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if valid(j) {
                    mx = mx.max(v * scale);
                }
            }
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for (j, (&v, o)) in row.iter().zip(dst.iter_mut()).enumerate() {
                if valid(j) {
                    *o = (v * scale - mx).exp();
                    z += *o;
                }
            }
            for o in dst.iter_mut() {
                *o /= z;
            }
        }
        let g = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::ScaledSoftmax { a, scale }, g))
    }

    /// `(a − μ) / (σ + eps)` with population statistics computed separately for
    /// every index combination along the dimensions in `setting` and pooled
    /// over the rest (valid slots only). Padded slots stay zero. A zero
    /// denominator yields zero (the `0/0 := 0` convention for `eps = 0`).
    pub fn standardize(&mut self, a: Var, setting: DimSet, eps: f64, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 3 {
            return Err(Error::dim(format!("standardize expects N x M x D, got {shape:?}")));
        }
        if eps < 0.0 {
            return Err(Error::Contract(format!("epsilon must be non-negative, got {eps}")));
        }
        let [n, m, d] = [shape[0], shape[1], shape[2]];
        if let Some(mk) = mask {
            if mk.sets() != n || mk.elems() != m {
                return Err(Error::dim(format!("mask {}x{} does not fit {shape:?}", mk.sets(), mk.elems())));
            }
        }
        let gd = setting.group_dims([n, m, d]);
        let groups = gd[0] * gd[1] * gd[2];
        let rows = stat_rows([n, m, d], setting, mask.map(|m| m.as_ref()));
        let src = self.value(a).data();
        let mut sum = vec![0.0; groups];
        let mut counts = vec![0usize; groups];
        for &(off, base) in &rows {
            let row = &src[off..off + d];
            if setting.d {
                for (s, &v) in sum[base..base + d].iter_mut().zip(row) {
                    *s += v;
                }
                counts[base..base + d].iter_mut().for_each(|c| *c += 1);
            } else {
                sum[base] += row.iter().sum::<f64>();
                counts[base] += d;
            }
        }
        for g in 0..groups {
            if counts[g] == 0 && !setting.m {
                return Err(Error::DegenerateInput(format!("statistics group {g} has no valid element")));
            }
        }
        let mean: Vec<f64> = sum.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
        let mut var = vec![0.0; groups];
        for &(off, base) in &rows {
            let row = &src[off..off + d];
            if setting.d {
                for ((v, &x), &mu) in var[base..base + d].iter_mut().zip(row).zip(&mean[base..base + d]) {
                    *v += (x - mu) * (x - mu);
                }
            } else {
                let mu = mean[base];
                var[base] += row.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>();
            }
        }
        let std: Vec<f64> = var.iter().zip(&counts).map(|(v, &c)| if c > 0 { (v / c as f64).sqrt() } else { 0.0 }).collect();
        let mut out = vec![0.0; src.len()];
        for &(off, base) in &rows {
            for k in 0..d {
                let g = if setting.d { base + k } else { base };
                let denom = std[g] + eps;
                let c = src[off + k] - mean[g];
                out[off + k] = if denom > 0.0 { c / denom } else { 0.0 };
            }
        }
        let g = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Standardize { a, setting, group_dims: gd, mean, std, counts, eps, mask: mask.cloned() },
            g,
        ))
    }

    /// Zero the rows of padded `(set, element)` slots of a rank-3 tensor.
    pub fn mask_rows(&mut self, a: Var, mask: &Arc<Mask>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 3 || shape[0] != mask.sets() || shape[1] != mask.elems() {
            return Err(Error::dim(format!("mask {}x{} does not fit {shape:?}", mask.sets(), mask.elems())));
        }
        let mut t = self.value(a).clone().with_requires_grad(false);
        zero_masked(t.data_mut(), mask, shape[2]);
        let g = self.any_grad(&[a]);
        Ok(self.push(t, Op::MaskRows { a, mask: mask.clone() }, g))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let g = self.any_grad(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::SumAll(a), g))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::dim("mean of empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let g = self.any_grad(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::MeanAll(a), g))
    }

    /// Mean over rows of `−log softmax(logits)[target]`, log-sum-exp stabilized.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::dim(format!("cross entropy expects [B, C] logits for {} targets, got {shape:?}", targets.len())));
        }
        let c = shape[1];
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Contract(format!("class {t} out of range for {c} classes")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; src.len()];
        let mut loss = 0.0;
        for (r, row) in src.chunks_exact(c).enumerate() {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            loss += lse - row[targets[r]];
            for (p, v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        loss /= targets.len() as f64;
        let g = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), probs },
            g,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves = BTreeMap::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf = node.op {
                leaves.insert(idx, g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        let mut params = BTreeMap::new();
        for &(id, v) in &self.params {
            let shape = self.shape(v);
            let g = leaves
                .get(&v.0)
                .map(|g| Tensor::new(shape, g.clone()).expect("grad shape"))
                .unwrap_or_else(|| Tensor::zeros(shape));
            params.insert(id, g);
        }
        Ok(Gradients {
            leaves: leaves
                .into_iter()
                .map(|(i, g)| (i, Tensor::new(self.nodes[i].value.shape(), g).expect("grad shape")))
                .collect(),
            params: GradMap(params),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, x) in acc.iter_mut().zip(&g) {
                    *a += x;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(a), self.value(b));
                let k = *ta.shape().last().unwrap();
                let n = *out_shape.last().unwrap();
                let rows = ta.numel() / k.max(1);
                if self.nodes[a.0].needs_grad {
                    // dA = dC · Bᵀ  (or dC · B when B was used transposed)
                    let mut da = vec![0.0; ta.numel()];
                    let bs = if trans_b { (k, 1) } else { (1, n) };
                    gemm(rows, n, k, 1.0, g, (n, 1), tb.data(), bs, 0.0, &mut da, k);
                    self.accumulate(grads, a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; tb.numel()];
                    if trans_b {
                        // dB = dCᵀ · A, shape [n, k]
                        gemm(n, rows, k, 1.0, g, (1, n), ta.data(), (k, 1), 0.0, &mut db, k);
                    } else {
                        // dB = Aᵀ · dC, shape [k, n]
                        gemm(k, rows, n, 1.0, ta.data(), (1, k), g, (n, 1), 0.0, &mut db, n);
                    }
                    self.accumulate(grads, b, db);
                }
            }
            &Op::BatchMatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = out_shape[2];
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![0.0; ta.numel()];
                    let st = if trans_b { (k, 1) } else { (1, n) };
                    for i in 0..bs {
                        gemm(
                            m, n, k, 1.0,
                            &g[i * m * n..(i + 1) * m * n], (n, 1),
                            &tb.data()[i * k * n..(i + 1) * k * n], st,
                            0.0, &mut da[i * m * k..(i + 1) * m * k], k,
                        );
                    }
                    self.accumulate(grads, a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; tb.numel()];
                    for i in 0..bs {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &ta.data()[i * m * k..(i + 1) * m * k];
                        let dbi = &mut db[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            gemm(n, m, k, 1.0, gi, (1, n), ai, (k, 1), 0.0, dbi, k);
                        } else {
                            gemm(k, m, n, 1.0, ai, (1, k), gi, (n, 1), 0.0, dbi, n);
                        }
                    }
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                for (v, sign) in [(a, 1.0), (b, if neg { -1.0 } else { 1.0 })] {
                    if self.nodes[v.0].needs_grad {
                        let mut r = kernels::reduce_to_shape(g, out_shape, self.shape(v));
                        if sign < 0.0 {
                            r.iter_mut().for_each(|x| *x = -*x);
                        }
                        self.accumulate(grads, v, r);
                    }
                }
            }
            &Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if self.nodes[v.0].needs_grad {
                        let to = self.value(other);
                        let prod = kernels::binary_broadcast(g, out_shape, to.data(), to.shape(), out_shape, |x, y| x * y);
                        let r = kernels::reduce_to_shape(&prod, out_shape, self.shape(v));
                        self.accumulate(grads, v, r);
                    }
                }
            }
            &Op::Scale(a, c) => {
                self.accumulate(grads, a, g.iter().map(|x| x * c).collect());
            }
            &Op::Relu(a) => {
                // relu'(0) := 0
                let x = self.value(a).data();
                let r = g.iter().zip(x).map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 }).collect();
                self.accumulate(grads, a, r);
            }
            Op::Reduce { a, axis, argmax, counts, kind, mask } => {
                let ta = self.value(*a);
                let (outer, len, inner) = kernels::split_axis(ta.shape(), *axis);
                let mut r = vec![0.0; ta.numel()];
                match kind {
                    Reduction::Max => {
                        for (oi, &flat) in argmax.iter().enumerate() {
                            if flat != usize::MAX {
                                r[flat] += g[oi];
                            }
                        }
                    }
                    Reduction::Sum | Reduction::Mean => {
                        let d_last = ta.shape().last().copied().unwrap_or(1);
                        for o in 0..outer {
                            for l in 0..len {
                                for i in 0..inner {
                                    let flat = (o * len + l) * inner + i;
                                    if let Some(m) = mask {
                                        if !m.flags()[flat / d_last] {
                                            continue;
                                        }
                                    }
                                    let oi = o * inner + i;
                                    r[flat] = if *kind == Reduction::Mean {
                                        g[oi] / counts[oi].max(1) as f64
                                    } else {
                                        g[oi]
                                    };
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, r);
            }
            &Op::Broadcast(a) => {
                let r = kernels::reduce_to_shape(g, out_shape, self.shape(a));
                self.accumulate(grads, a, r);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = kernels::split_axis(out_shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    if self.nodes[v.0].needs_grad {
                        let mut r = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            r.extend_from_slice(&g[base..base + len * inner]);
                        }
                        self.accumulate(grads, v, r);
                    }
                    offset += len;
                }
            }
            &Op::Narrow { a, axis, start } => {
                let sa = self.shape(a);
                let (outer, full, inner) = kernels::split_axis(sa, axis);
                let len = out_shape[axis];
                let mut r = vec![0.0; self.value(a).numel()];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    r[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, a, r);
            }
            &Op::Transpose(a) => {
                self.accumulate(grads, a, transpose_last2(g, out_shape));
            }
            &Op::Reshape(a) => {
                self.accumulate(grads, a, g.to_vec());
            }
            &Op::ScaledSoftmax { a, scale } => {
                let y = node.value.data();
                let last = *out_shape.last().unwrap();
                let mut r = vec![0.0; y.len()];
                for ((yr, gr), rr) in y.chunks_exact(last).zip(g.chunks_exact(last)).zip(r.chunks_exact_mut(last)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in rr.iter_mut().zip(yr).zip(gr) {
                        *o = scale * yv * (gv - dot);
                    }
                }
                self.accumulate(grads, a, r);
            }
            Op::Standardize { a, setting, group_dims: gd, mean, std, counts, eps, mask } => {
                let x = self.value(*a).data();
                let d = out_shape[2];
                let groups = gd[0] * gd[1] * gd[2];
                let rows = stat_rows([out_shape[0], out_shape[1], d], *setting, mask.as_deref());
                let mut sum_g = vec![0.0; groups];
                let mut sum_gc = vec![0.0; groups];
                for &(off, base) in &rows {
                    for k in 0..d {
                        let gg = if setting.d { base + k } else { base };
                        let idx = off + k;
                        sum_g[gg] += g[idx];
                        sum_gc[gg] += g[idx] * (x[idx] - mean[gg]);
                    }
                }
                // per group: out = (g - mean_g) * inv - c * coef
                let coef: Vec<(f64, f64, f64)> = (0..groups)
                    .map(|gg| {
                        let s = std[gg] + eps;
                        if s <= 0.0 || counts[gg] == 0 {
                            return (0.0, 0.0, 0.0);
                        }
                        let cnt = counts[gg] as f64;
                        let c2 = if std[gg] > 0.0 { sum_gc[gg] / (cnt * std[gg] * s * s) } else { 0.0 };
                        (sum_g[gg] / cnt, 1.0 / s, c2)
                    })
                    .collect();
                let mut r = vec![0.0; x.len()];
                for &(off, base) in &rows {
                    for k in 0..d {
                        let gg = if setting.d { base + k } else { base };
                        let (mg, inv, c2) = coef[gg];
                        let idx = off + k;
                        r[idx] = (g[idx] - mg) * inv - (x[idx] - mean[gg]) * c2;
                    }
                }
                self.accumulate(grads, *a, r);
            }
            Op::MaskRows { a, mask } => {
                let mut r = g.to_vec();
                zero_masked(&mut r, mask, out_shape[2]);
                self.accumulate(grads, *a, r);
            }
            &Op::SumAll(a) => {
                let n = self.value(a).numel();
                self.accumulate(grads, a, vec![g[0]; n]);
            }
            &Op::MeanAll(a) => {
                let n = self.value(a).numel();
                self.accumulate(grads, a, vec![g[0] / n as f64; n]);
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let c = probs.len() / targets.len();
                let scale = g[0] / targets.len() as f64;
                let mut r: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (row, &t) in targets.iter().enumerate() {
                    r[row * c + t] -= scale;
                }
                self.accumulate(grads, *logits, r);
            }
        }
    }
}

/// `(row offset, base group index)` of every valid `(set, element)` row of an
/// `N x M x D` tensor; the group of feature `k` is `base + k` when `D` is in
/// the setting and `base` otherwise.
fn stat_rows([n, m, d]: [usize; 3], setting: DimSet, mask: Option<&Mask>) -> Vec<(usize, usize)> {
    let gd = setting.group_dims([n, m, d]);
    let mut rows = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            if mask.is_some_and(|mk| !mk.is_valid(i, j)) {
                continue;
            }
            let gi = if setting.n { i } else { 0 };
            let gj = if setting.m { j } else { 0 };
            rows.push(((i * m + j) * d, (gi * gd[1] + gj) * gd[2]));
        }
    }
    rows
}

fn zero_masked(data: &mut [f64], mask: &Mask, d: usize) {
    for (slot, &ok) in mask.flags().iter().enumerate() {
        if !ok {
            data[slot * d..(slot + 1) * d].fill(0.0);
        }
    }
}

fn transpose_last2(src: &[f64], shape: &[usize]) -> Vec<f64> {
    let r = shape.len();
    let (rows, cols) = (shape[r - 2], shape[r - 1]);
    let batches = src.len() / (rows * cols).max(1);
    let mut out = vec![0.0; src.len()];
    for b in 0..batches {
        let off = b * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                out[off + j * rows + i] = src[off + i * cols + j];
            }
        }
    }
    out
}

/// Parameter gradients keyed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradMap(BTreeMap<ParamId, Tensor>);

impl GradMap {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, g: Tensor) {
        self.0.insert(id, g);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.0.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.0.iter().map(|(k, v)| (*k, v))
    }

    /// Add `other` into `self` (used when a batch is processed in chunks).
    pub fn accumulate(&mut self, other: GradMap) {
        for (id, g) in other.0 {
            match self.0.get_mut(&id) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.0.insert(id, g);
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(Tensor::is_finite)
    }
}

/// Result of [`Tape::backward`]: gradients of every leaf that required one.
#[derive(Debug)]
pub struct Gradients {
    leaves: BTreeMap<usize, Tensor>,
    params: GradMap,
}

impl Gradients {
    /// Gradient w.r.t. a leaf; `None` if the leaf did not require grad or no
    /// path reached it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    pub fn params(&self) -> &GradMap {
        &self.params
    }

    pub fn into_params(self) -> GradMap {
        self.params
    }
}
