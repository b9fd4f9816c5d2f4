//! Reverse mode against central differences for every tape primitive, on
//! randomized inputs.

use std::sync::Arc;

use proptest::prelude::*;
use setnet::autodiff::{Reduction, Tape, Var};
use setnet::norm::DimSet;
use setnet::tensor::{Mask, Tensor};
use setnet::Result;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// `sum(f(inputs) * w)` for fixed pseudo-random weights `w`, so every output
/// coordinate contributes with a distinct factor.
fn weighted_loss(tape: &mut Tape, out: Var) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(&shape, (0..n).map(|i| ((i * 37 + 11) % 17) as f64 / 8.0 - 1.0).collect())?;
    let w = tape.constant(w)?;
    let p = tape.mul(out, w)?;
    tape.sum_all(p)
}

fn eval(inputs: &[Tensor], f: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone()).unwrap()).collect();
    let out = f(&mut tape, &vars).unwrap();
    let l = weighted_loss(&mut tape, out).unwrap();
    tape.value(l).item()
}

/// Largest error over all input coordinates, relative to `max(|g|, 1e-3)`:
/// below that magnitude the comparison is absolute, which keeps round-off in
/// near-zero gradients from dominating.
fn max_grad_error(inputs: &[Tensor], f: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true)).unwrap()).collect();
    let out = f(&mut tape, &vars).unwrap();
    let l = weighted_loss(&mut tape, out).unwrap();
    let grads = tape.backward(l).unwrap();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let fd = (eval(&plus, f) - eval(&minus, f)) / (2.0 * H);
            let a = g.data()[i];
            worst = worst.max((a - fd).abs() / a.abs().max(1e-3));
        }
    }
    worst
}

fn tensor(shape: &[usize]) -> impl Strategy<Value = Tensor> {
    let shape = shape.to_vec();
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |v| Tensor::new(&shape, v).unwrap())
}

fn dims3() -> impl Strategy<Value = [usize; 3]> {
    (1usize..4, 1usize..5, 1usize..4).prop_map(|(a, b, c)| [a, b, c])
}

fn min_gap(t: &Tensor) -> f64 {
    let mut v = t.data().to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

fn lengths_mask(n: usize, m: usize) -> Arc<Mask> {
    let lengths: Vec<usize> = (0..n).map(|i| m - (i % m.max(1)).min(m - 1)).collect();
    Arc::new(Mask::from_lengths(&lengths, m).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_grad(
        (a, b, trans) in (1usize..5, 1usize..5, 1usize..5, any::<bool>()).prop_flat_map(|(m, k, n, trans)| {
            let b = if trans { vec![n, k] } else { vec![k, n] };
            (tensor(&[2, m, k]), tensor(&b), Just(trans))
        })
    ) {
        let err = max_grad_error(&[a, b], &move |t, v| t.matmul(v[0], v[1], trans));
        prop_assert!(err < TOL, "err {err}");
    }

    #[test]
    fn bmm_grad(a in tensor(&[2, 3, 4]), b in tensor(&[2, 4, 2]), c in tensor(&[2, 5, 4])) {
        prop_assert!(max_grad_error(&[a.clone(), b], &|t, v| t.bmm(v[0], v[1], false)) < TOL);
        prop_assert!(max_grad_error(&[a, c], &|t, v| t.bmm(v[0], v[1], true)) < TOL);
    }

    #[test]
    fn broadcast_arith_grad(a in tensor(&[2, 3, 4]), b in tensor(&[4]), c in tensor(&[3, 1])) {
        prop_assert!(max_grad_error(&[a.clone(), b.clone()], &|t, v| t.add(v[0], v[1])) < TOL);
        prop_assert!(max_grad_error(&[a.clone(), c.clone()], &|t, v| t.sub(v[0], v[1])) < TOL);
        prop_assert!(max_grad_error(&[a.clone(), b], &|t, v| t.mul(v[0], v[1])) < TOL);
        prop_assert!(max_grad_error(&[a, c], &|t, v| t.mul(v[0], v[1])) < TOL);
    }

    #[test]
    fn scale_and_relu_grad(a in tensor(&[3, 4]), c in -3.0f64..3.0) {
        prop_assume!(a.data().iter().all(|v| v.abs() > 1e-3));
        prop_assert!(max_grad_error(&[a.clone()], &move |t, v| t.scale(v[0], c)) < TOL);
        prop_assert!(max_grad_error(&[a], &|t, v| t.relu(v[0])) < TOL);
    }

    #[test]
    fn reduce_grad(a in tensor(&[3, 4, 2]), axis in 0usize..3) {
        for kind in [Reduction::Sum, Reduction::Mean] {
            prop_assert!(max_grad_error(&[a.clone()], &move |t, v| t.reduce(v[0], axis, kind, None)) < TOL);
        }
        prop_assume!(min_gap(&a) > 1e-3);
        prop_assert!(max_grad_error(&[a], &move |t, v| t.reduce(v[0], axis, Reduction::Max, None)) < TOL);
    }

    #[test]
    fn masked_reduce_grad(a in tensor(&[3, 4, 2])) {
        prop_assume!(min_gap(&a) > 1e-3);
        let mask = lengths_mask(3, 4);
        for kind in [Reduction::Sum, Reduction::Mean, Reduction::Max] {
            let m = mask.clone();
            prop_assert!(max_grad_error(&[a.clone()], &move |t, v| t.reduce(v[0], 1, kind, Some(&m))) < TOL);
        }
    }

    #[test]
    fn shape_ops_grad(a in tensor(&[2, 3, 4]), b in tensor(&[2, 2, 4])) {
        prop_assert!(max_grad_error(&[a.clone(), b], &|t, v| t.concat(&[v[0], v[1]], 1)) < TOL);
        prop_assert!(max_grad_error(&[a.clone()], &|t, v| t.narrow(v[0], 2, 1, 2)) < TOL);
        prop_assert!(max_grad_error(&[a.clone()], &|t, v| t.transpose(v[0])) < TOL);
        prop_assert!(max_grad_error(&[a.clone()], &|t, v| t.reshape(v[0], &[6, 4])) < TOL);
        let err = max_grad_error(&[a], &|t, v| {
            let s = t.reduce(v[0], 1, Reduction::Sum, None)?;
            let s = t.reshape(s, &[2, 1, 4])?;
            t.broadcast_to(s, &[2, 3, 4])
        });
        prop_assert!(err < TOL);
    }

    #[test]
    fn softmax_grad(a in tensor(&[2, 3, 4]), scale in 0.1f64..2.0) {
        prop_assert!(max_grad_error(&[a.clone()], &move |t, v| t.scaled_softmax(v[0], scale, None)) < TOL);
        let mask = lengths_mask(2, 4);
        prop_assert!(max_grad_error(&[a], &move |t, v| t.scaled_softmax(v[0], scale, Some(&*mask))) < TOL);
    }

    #[test]
    fn standardize_grad(
        (a, bits) in (dims3(), 0usize..8).prop_flat_map(|(shape, bits)| (tensor(&shape), Just(bits))),
        eps in prop_oneof![Just(0.0), Just(1e-5), Just(0.1)],
    ) {
        let s = DimSet::all()[bits];
        let [n, m, d]: [usize; 3] = a.shape().try_into().unwrap();
        // a smooth std needs at least two pooled entries per group
        let pooled = (if s.n { 1 } else { n }) * (if s.m { 1 } else { m }) * (if s.d { 1 } else { d });
        prop_assume!(pooled >= 2);
        prop_assert!(max_grad_error(&[a], &move |t, v| t.standardize(v[0], s, eps, None)) < TOL);
    }

    #[test]
    fn masked_standardize_grad(a in tensor(&[3, 4, 2]), bits in 0usize..8) {
        let s = DimSet::all()[bits];
        prop_assume!(!s.m);
        let mask = lengths_mask(3, 4);
        let err = max_grad_error(&[a], &move |t, v| t.standardize(v[0], s, 1e-5, Some(&mask)));
        prop_assert!(err < TOL, "err {err} for {s}");
    }

    #[test]
    fn mask_rows_and_reductions_grad(a in tensor(&[3, 4, 2])) {
        let mask = lengths_mask(3, 4);
        prop_assert!(max_grad_error(&[a.clone()], &move |t, v| t.mask_rows(v[0], &mask)) < TOL);
        prop_assert!(max_grad_error(&[a.clone()], &|t, v| t.sum_all(v[0])) < TOL);
        prop_assert!(max_grad_error(&[a], &|t, v| t.mean_all(v[0])) < TOL);
    }

    #[test]
    fn cross_entropy_grad(a in tensor(&[4, 3]), labels in prop::collection::vec(0usize..3, 4)) {
        prop_assert!(max_grad_error(&[a], &move |t, v| t.softmax_cross_entropy(v[0], &labels)) < TOL);
    }
}
