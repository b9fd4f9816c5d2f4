use std::sync::Arc;

use setnet::autodiff::Var;
use setnet::blocks::{
    apply_residual, Block, BlockKind, BlockSpec, DsResidual, FreqAdd, IsabOriginal, IsabPP, MabOriginal, MabPP, MabVariant,
    MultiHead, ResidualKind,
};
use setnet::norm::{set_norm, NormKind};
use setnet::params::{Ctx, Mode, ParamStore};
use setnet::rng::{SeededRng, Stream};
use setnet::tensor::{permute_tensor_elements, Mask, SetBatch, Tensor};
use setnet::{Error, Result};

fn rng(i: u64) -> SeededRng {
    SeededRng::new(i, Stream::Check, 0)
}

fn randn(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Every permutation of `0..n`, in lexicographic order.
fn all_perms(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in all_perms(n - 1) {
        for pos in 0..n {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

fn eval(store: &ParamStore, x: &Tensor, mask: Option<&Arc<Mask>>, f: impl Fn(&mut Ctx, Var, Option<&Arc<Mask>>) -> Result<Var>) -> Tensor {
    let mut ctx = Ctx::new(store, Mode::Train);
    let xv = ctx.constant(x.clone()).unwrap();
    let y = f(&mut ctx, xv, mask).unwrap();
    ctx.tape.value(y).clone()
}

fn relu(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

fn matmul(x: &Tensor, w: &Tensor) -> Tensor {
    let (rows, k) = (x.numel() / x.shape().last().unwrap(), *x.shape().last().unwrap());
    let n = w.shape()[1];
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        for j in 0..n {
            out[r * n + j] = (0..k).map(|t| x.data()[r * k + t] * w.data()[t * n + j]).sum();
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Tensor::new(&shape, out).unwrap()
}

fn set_value(store: &mut ParamStore, id: setnet::autodiff::ParamId, t: Tensor) {
    *store.value_mut(id) = t;
}

#[test]
fn attention_over_one_key_repeats_the_value() {
    let d = 4;
    let mut store = ParamStore::new();
    let mha = MultiHead::new(&mut store, &mut rng(0), "a", d, d, d, 2).unwrap();
    for id in [mha.wq, mha.wk, mha.wv, mha.wo] {
        set_value(&mut store, id, Tensor::eye(d));
    }
    let mut r = rng(1);
    let q = randn(&mut r, &[1, 3, d]);
    let kv = randn(&mut r, &[1, 1, d]);
    let mut ctx = Ctx::new(&store, Mode::Train);
    let (qv, kvv) = (ctx.constant(q).unwrap(), ctx.constant(kv.clone()).unwrap());
    let out = mha.forward(&mut ctx, qv, kvv, kvv, None, None).unwrap();
    let out = ctx.tape.value(out);
    for row in out.data().chunks(d) {
        for (a, b) in row.iter().zip(kv.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn uniform_logits_average_projected_values() {
    let d = 4;
    let mut store = ParamStore::new();
    let mha = MultiHead::new(&mut store, &mut rng(0), "a", d, d, d, 1).unwrap();
    set_value(&mut store, mha.wk, Tensor::zeros(&[d, d]));
    let mut r = rng(2);
    let q = randn(&mut r, &[1, 2, d]);
    let kv = randn(&mut r, &[1, 5, d]);
    let mut ctx = Ctx::new(&store, Mode::Train);
    let (qv, kvv) = (ctx.constant(q).unwrap(), ctx.constant(kv.clone()).unwrap());
    let out = mha.forward(&mut ctx, qv, kvv, kvv, None, None).unwrap();
    let out = ctx.tape.value(out).clone();

    let vp = matmul(&kv, store.value(mha.wv));
    let mean: Vec<f64> = (0..d).map(|j| (0..5).map(|i| vp.data()[i * d + j]).sum::<f64>() / 5.0).collect();
    let expect = matmul(&Tensor::new(&[1, d], mean).unwrap(), store.value(mha.wo));
    for row in out.data().chunks(d) {
        for (a, b) in row.iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn attention_ignores_key_value_order() {
    let d = 4;
    let mut store = ParamStore::new();
    let mha = MultiHead::new(&mut store, &mut rng(0), "a", d, d, d, 2).unwrap();
    let mut r = rng(3);
    let q = randn(&mut r, &[1, 3, d]);
    let kv = randn(&mut r, &[1, 4, d]);
    let run = |kv: &Tensor| {
        let mut ctx = Ctx::new(&store, Mode::Train);
        let (qv, kvv) = (ctx.constant(q.clone()).unwrap(), ctx.constant(kv.clone()).unwrap());
        let out = mha.forward(&mut ctx, qv, kvv, kvv, None, None).unwrap();
        ctx.tape.value(out).clone()
    };
    let base = run(&kv);
    for p in all_perms(4) {
        let permuted = permute_tensor_elements(&kv, None, &[p]);
        assert!(run(&permuted).max_abs_diff(&base) < 1e-12);
    }
}

#[test]
fn masked_keys_do_not_contribute() {
    let d = 4;
    let mut store = ParamStore::new();
    let mha = MultiHead::new(&mut store, &mut rng(0), "a", d, d, d, 2).unwrap();
    let mut r = rng(4);
    let q = randn(&mut r, &[1, 2, d]);
    let kv = randn(&mut r, &[1, 5, d]);
    let mask = Arc::new(Mask::from_lengths(&[3], 5).unwrap());
    let run = |kv: &Tensor, mask: Option<&Arc<Mask>>| {
        let mut ctx = Ctx::new(&store, Mode::Train);
        let (qv, kvv) = (ctx.constant(q.clone()).unwrap(), ctx.constant(kv.clone()).unwrap());
        let out = mha.forward(&mut ctx, qv, kvv, kvv, None, mask).unwrap();
        ctx.tape.value(out).clone()
    };
    let mut garbage = kv.clone();
    garbage.data_mut()[3 * d..].iter_mut().for_each(|v| *v = 1e6);
    let truncated = Tensor::new(&[1, 3, d], kv.data()[..3 * d].to_vec()).unwrap();
    let a = run(&garbage, Some(&mask));
    assert!(a.max_abs_diff(&run(&kv, Some(&mask))) == 0.0);
    assert!(a.max_abs_diff(&run(&truncated, None)) < 1e-14);
}

#[test]
fn heads_must_divide_width() {
    let mut store = ParamStore::new();
    let err = MultiHead::new(&mut store, &mut rng(0), "a", 6, 6, 6, 4).unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err:?}");
}

#[test]
fn original_mab_skips_from_projected_query() {
    let d = 4;
    let mut store = ParamStore::new();
    let mab = MabOriginal::new(&mut store, &mut rng(0), "m", d, d, d, 2, NormKind::None).unwrap();
    for id in [mab.attn.wq, mab.attn.wk, mab.attn.wv, mab.attn.wo, mab.ff.w, mab.ff.b.unwrap()] {
        let shape = store.value(id).shape().to_vec();
        set_value(&mut store, id, Tensor::zeros(&shape));
    }
    let mut r = rng(5);
    let (x, y) = (randn(&mut r, &[2, 3, d]), randn(&mut r, &[2, 4, d]));
    let mut ctx = Ctx::new(&store, Mode::Train);
    let (xv, yv) = (ctx.constant(x.clone()).unwrap(), ctx.constant(y).unwrap());
    let out = mab.forward(&mut ctx, xv, None, yv, None).unwrap();
    let out = ctx.tape.value(out).clone();
    assert!(out.max_abs_diff(&matmul(&x, store.value(mab.wq))) < 1e-15);

    store.zero_trainable();
    let mut ctx = Ctx::new(&store, Mode::Train);
    let (xv, yv) = (ctx.constant(x).unwrap(), ctx.constant(Tensor::zeros(&[2, 4, d])).unwrap());
    let out = mab.forward(&mut ctx, xv, None, yv, None).unwrap();
    assert!(ctx.tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn original_mab_matches_its_equations() {
    let d = 4;
    let mut store = ParamStore::new();
    let mab = MabOriginal::new(&mut store, &mut rng(1), "m", d, d, d, 1, NormKind::None).unwrap();
    let mut r = rng(6);
    let (x, y) = (randn(&mut r, &[1, 3, d]), randn(&mut r, &[1, 2, d]));
    let mut ctx = Ctx::new(&store, Mode::Train);
    let (xv, yv) = (ctx.constant(x.clone()).unwrap(), ctx.constant(y.clone()).unwrap());
    let got = mab.forward(&mut ctx, xv, None, yv, None).unwrap();
    let got = ctx.tape.value(got).clone();

    // single head, written out with plain loops
    let (q, k, v) = (matmul(&x, store.value(mab.attn.wq)), matmul(&y, store.value(mab.attn.wk)), matmul(&y, store.value(mab.attn.wv)));
    let mut att = vec![0.0; 3 * d];
    for i in 0..3 {
        let logits: Vec<f64> = (0..2).map(|j| (0..d).map(|t| q.data()[i * d + t] * k.data()[j * d + t]).sum::<f64>() / (d as f64).sqrt()).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        for j in 0..2 {
            let a = (logits[j] - mx).exp() / z;
            for t in 0..d {
                att[i * d + t] += a * v.data()[j * d + t];
            }
        }
    }
    let att = matmul(&Tensor::new(&[1, 3, d], att).unwrap(), store.value(mab.attn.wo));
    let skip = matmul(&x, store.value(mab.wq));
    let f: Vec<f64> = skip.data().iter().zip(att.data()).map(|(a, b)| a + b).collect();
    let f = Tensor::new(&[1, 3, d], f).unwrap();
    let h = matmul(&f, store.value(mab.ff.w));
    let b = store.value(mab.ff.b.unwrap());
    let expect: Vec<f64> = (0..3 * d).map(|i| f.data()[i] + (h.data()[i] + b.data()[i % d]).max(0.0)).collect();
    assert!(got.max_abs_diff(&Tensor::new(&[1, 3, d], expect).unwrap()) < 1e-13);
}

fn brute_force_equivariance(f: impl Fn(&Tensor) -> Tensor, x: &Tensor) -> f64 {
    let base = f(x);
    let m = x.shape()[1];
    let mut worst = 0.0f64;
    for p in all_perms(m) {
        let perms = vec![p; x.shape()[0]];
        let lhs = f(&permute_tensor_elements(x, None, &perms));
        let rhs = permute_tensor_elements(&base, None, &perms);
        worst = worst.max(lhs.max_abs_diff(&rhs));
    }
    worst
}

#[test]
fn mab_variants_are_equivariant_in_the_query_set() {
    let d = 4;
    let mut r = rng(7);
    let (x, y) = (randn(&mut r, &[2, 4, d]), randn(&mut r, &[2, 3, d]));
    for which in 0..3 {
        let mut store = ParamStore::new();
        let mut init = rng(10 + which);
        let f: Box<dyn Fn(&mut Ctx, Var, Var) -> Result<Var>> = match which {
            0 => {
                let m = MabOriginal::new(&mut store, &mut init, "m", d, d, d, 2, NormKind::LayerNorm).unwrap();
                Box::new(move |c, x, y| m.forward(c, x, None, y, None))
            }
            w => {
                let v = if w == 1 { MabVariant::First } else { MabVariant::Second };
                let m = MabPP::new(&mut store, &mut init, "m", v, d, 2, NormKind::SetNorm, ResidualKind::Erc).unwrap();
                Box::new(move |c, x, y| m.forward(c, x, None, y, None))
            }
        };
        let run = |x: &Tensor| {
            let mut ctx = Ctx::new(&store, Mode::Train);
            let (xv, yv) = (ctx.constant(x.clone()).unwrap(), ctx.constant(y.clone()).unwrap());
            let out = f(&mut ctx, xv, yv).unwrap();
            ctx.tape.value(out).clone()
        };
        assert!(brute_force_equivariance(run, &x) < 1e-12, "variant {which}");
    }
}

#[test]
fn isab_is_equivariant_and_its_summary_invariant() {
    let d = 4;
    let mut r = rng(8);
    let x = randn(&mut r, &[2, 4, d]);
    let mut store = ParamStore::new();
    let isab = IsabOriginal::new(&mut store, &mut rng(9), "i", d, d, 2, 3, NormKind::None).unwrap();
    let mut store_pp = ParamStore::new();
    let isab_pp = IsabPP::new(&mut store_pp, &mut rng(9), "i", d, 2, 3, NormKind::SetNorm, ResidualKind::Erc).unwrap();

    let fwd = |x: &Tensor| eval(&store, x, None, |c, x, m| isab.forward(c, x, m));
    assert!(brute_force_equivariance(fwd, &x) < 1e-12);
    let fwd_pp = |x: &Tensor| eval(&store_pp, x, None, |c, x, m| isab_pp.forward(c, x, m));
    assert!(brute_force_equivariance(fwd_pp, &x) < 1e-12);

    let h = eval(&store, &x, None, |c, x, m| isab.summary(c, x, m));
    assert_eq!(h.shape(), &[2, 3, d]);
    for p in all_perms(4) {
        let xp = permute_tensor_elements(&x, None, &[p.clone(), p]);
        assert!(eval(&store, &xp, None, |c, x, m| isab.summary(c, x, m)).max_abs_diff(&h) < 1e-12);
    }
}

#[test]
fn first_pp_block_leaves_the_query_unnormalized() {
    let mut store = ParamStore::new();
    let m1 = MabPP::new(&mut store, &mut rng(0), "a", MabVariant::First, 4, 2, NormKind::SetNorm, ResidualKind::Erc).unwrap();
    let m2 = MabPP::new(&mut store, &mut rng(0), "b", MabVariant::Second, 4, 2, NormKind::SetNorm, ResidualKind::Erc).unwrap();
    assert!(m1.norm_x.is_none() && m1.norm_y.is_some() && m1.norm_h.is_some());
    assert!(m2.norm_x.is_some());
    assert!(m1.fcc.b.is_none() && m1.fcc.d_in == 4 && m1.fcc.d_out == 4);
}

fn zero_weight_block(kind: BlockKind, norm: NormKind, d: usize) -> (ParamStore, Block) {
    let mut spec = BlockSpec::new(kind, d).with_norm(norm).with_residual(ResidualKind::Erc);
    if kind.is_attention() {
        spec = spec.with_attention(2, 3);
    }
    let mut store = ParamStore::new();
    let block = Block::build(&mut store, &mut rng(20), "b", &spec, d).unwrap();
    store.zero_trainable();
    (store, block)
}

#[test]
fn clean_blocks_are_identities_at_zero_weights() {
    let d = 4;
    let x = randn(&mut rng(21), &[3, 5, d]);
    for kind in [BlockKind::DsResidualClean, BlockKind::IsabPP] {
        for norm in [NormKind::None, NormKind::LayerNorm, NormKind::SetNorm, NormKind::FeatureNorm] {
            let (store, block) = zero_weight_block(kind, norm, d);
            let y = eval(&store, &x, None, |c, x, m| block.forward(c, x, m));
            assert_eq!(y.max_abs_diff(&x), 0.0, "{kind:?} {norm:?}");
        }
    }
}

#[test]
fn nonclean_blocks_reduce_to_relu_at_zero_weights() {
    let d = 4;
    let x = randn(&mut rng(22), &[3, 5, d]);
    assert!(x.data().iter().any(|&v| v < 0.0));
    for kind in [BlockKind::DsResidualNonClean, BlockKind::FreqAdd] {
        for norm in [NormKind::None, NormKind::SetNorm] {
            let (store, block) = zero_weight_block(kind, norm, d);
            let once = eval(&store, &x, None, |c, x, m| block.forward(c, x, m));
            assert_eq!(once.max_abs_diff(&relu(&x)), 0.0, "{kind:?} {norm:?}");
            let twice = eval(&store, &once, None, |c, x, m| block.forward(c, x, m));
            assert_eq!(twice, once);
            assert!(once.max_abs_diff(&x) > 0.0);
        }
    }
}

#[test]
fn clean_stack_passes_the_cotangent_through_unchanged() {
    let d = 4;
    let depth = 12;
    let mut store = ParamStore::new();
    let spec = BlockSpec::new(BlockKind::DsResidualClean, d).with_norm(NormKind::SetNorm);
    let blocks: Vec<Block> = (0..depth).map(|i| Block::build(&mut store, &mut rng(30), &format!("b{i}"), &spec, d).unwrap()).collect();
    store.zero_trainable();
    let mut r = rng(31);
    let x = randn(&mut r, &[2, 5, d]);
    let v = randn(&mut r, &[2, 5, d]);
    let mut ctx = Ctx::new(&store, Mode::Train);
    let xv = ctx.tape.leaf(x.with_requires_grad(true)).unwrap();
    let mut h = xv;
    for b in &blocks {
        h = b.forward(&mut ctx, h, None).unwrap();
    }
    let w = ctx.constant(v.clone()).unwrap();
    let p = ctx.tape.mul(h, w).unwrap();
    let loss = ctx.tape.sum_all(p).unwrap();
    let g = ctx.tape.backward(loss).unwrap();
    let vjp = g.wrt(xv).unwrap();
    assert!(vjp.max_abs_diff(&v) < 1e-12);
    assert!((vjp.l2_norm() / v.l2_norm() - 1.0).abs() < 1e-12);
}

#[test]
fn clean_ds_block_matches_its_formula() {
    let d = 4;
    let mut store = ParamStore::new();
    let b = DsResidual::new(&mut store, &mut rng(40), "b", d, NormKind::SetNorm, ResidualKind::Erc, true).unwrap();
    // non-trivial affine parameters so the transform is exercised
    let mut r = rng(41);
    for n in [&b.n1, &b.n2] {
        let n = n.as_ref().unwrap();
        set_value(&mut store, n.gamma(), Tensor::vector((0..d).map(|_| r.uniform(0.5, 1.5)).collect()));
        set_value(&mut store, n.beta(), Tensor::vector((0..d).map(|_| r.normal()).collect()));
    }
    let x = randn(&mut r, &[3, 5, d]);
    let got = eval(&store, &x, None, |c, x, m| b.forward(c, x, m));

    assert!(b.w1.b.is_none() && b.w2.b.is_none(), "no bias before a norm");
    let sn = |t: Tensor, n: &Option<setnet::norm::NormLayer>| {
        let n = n.as_ref().unwrap();
        set_norm(&SetBatch::dense(t).unwrap(), store.value(n.gamma()), store.value(n.beta()), setnet::norm::DEFAULT_EPS)
            .unwrap()
            .into_tensor()
    };
    let inner = relu(&sn(matmul(&x, store.value(b.w2.w)), &b.n2));
    let f = sn(matmul(&inner, store.value(b.w1.w)), &b.n1);
    let expect: Vec<f64> = x.data().iter().zip(f.data()).map(|(a, b)| a + b).collect();
    assert!(got.max_abs_diff(&Tensor::new(&[3, 5, d], expect).unwrap()) < 1e-13);
}

#[test]
fn freq_add_outputs_are_nonnegative() {
    let d = 4;
    let mut store = ParamStore::new();
    let b = FreqAdd::new(&mut store, &mut rng(50), "f", d, NormKind::SetNorm, ResidualKind::Erc).unwrap();
    let x = randn(&mut rng(51), &[3, 6, d]).map(|v| 4.0 * v);
    let y = eval(&store, &x, None, |c, x, m| b.forward(c, x, m));
    assert!(y.data().iter().all(|&v| v >= 0.0));
}

#[test]
fn residual_kinds_with_zero_branch() {
    let d = 3;
    let x = randn(&mut rng(60), &[2, 4, d]);
    let mask = Arc::new(Mask::from_lengths(&[4, 2], 4).unwrap());
    let store = ParamStore::new();
    let run = |kind| {
        eval(&store, &x, Some(&mask), |c, x, m| {
            let z = c.constant(Tensor::zeros(&[2, 4, d]))?;
            apply_residual(&mut c.tape, x, z, kind, m)
        })
    };
    let erc = run(ResidualKind::Erc);
    let arc = run(ResidualKind::ArcMean);
    for s in 0..2 {
        let len = mask.count(s);
        for e in 0..4 {
            for j in 0..d {
                let at = (s * 4 + e) * d + j;
                if e >= len {
                    assert_eq!((erc.data()[at], arc.data()[at]), (0.0, 0.0));
                    continue;
                }
                assert_eq!(erc.data()[at], x.data()[at]);
                let mean = (0..len).map(|k| x.data()[(s * 4 + k) * d + j]).sum::<f64>() / len as f64;
                assert!((arc.data()[at] - mean).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn residual_kinds_are_equivariant() {
    let d = 3;
    let mut r = rng(61);
    let x = randn(&mut r, &[2, 4, d]);
    let fx = randn(&mut r, &[2, 4, d]);
    let store = ParamStore::new();
    for kind in [ResidualKind::Erc, ResidualKind::ArcMean, ResidualKind::ArcMax] {
        let base = eval(&store, &x, None, |c, x, m| {
            let f = c.constant(fx.clone())?;
            apply_residual(&mut c.tape, x, f, kind, m)
        });
        for p in all_perms(4) {
            let perms = vec![p; 2];
            let (xp, fp) = (permute_tensor_elements(&x, None, &perms), permute_tensor_elements(&fx, None, &perms));
            let out = eval(&store, &xp, None, |c, x, m| {
                let f = c.constant(fp.clone())?;
                apply_residual(&mut c.tape, x, f, kind, m)
            });
            assert!(out.max_abs_diff(&permute_tensor_elements(&base, None, &perms)) < 1e-15, "{kind:?}");
        }
    }
}

#[test]
fn residual_shape_mismatch_is_rejected() {
    let store = ParamStore::new();
    let mut ctx = Ctx::new(&store, Mode::Train);
    let x = ctx.constant(Tensor::zeros(&[1, 2, 3])).unwrap();
    let f = ctx.constant(Tensor::zeros(&[1, 2, 4])).unwrap();
    assert!(matches!(apply_residual(&mut ctx.tape, x, f, ResidualKind::Erc, None), Err(Error::Dimension(_))));
}

#[test]
fn block_spec_validation() {
    let mut bare = BlockSpec::new(BlockKind::Isab, 8);
    bare.heads = None;
    assert!(bare.validate(8).is_err(), "attention fields required");
    assert!(BlockSpec::new(BlockKind::Isab, 8).validate(8).is_ok());
    assert!(BlockSpec::new(BlockKind::DsFeedforward, 8).with_attention(2, 2).validate(8).is_err());
    assert!(BlockSpec::new(BlockKind::IsabPP, 8).with_attention(3, 2).validate(8).is_err());
    assert!(BlockSpec::new(BlockKind::IsabPP, 8).with_attention(2, 0).validate(8).is_err());
    assert!(BlockSpec::new(BlockKind::DsResidualClean, 8).validate(4).is_err());
    assert!(BlockSpec::new(BlockKind::DsFeedforward, 8).validate(4).is_ok());
}

#[test]
fn param_counts_match_the_store() {
    for kind in [
        BlockKind::DsFeedforward,
        BlockKind::DsResidualClean,
        BlockKind::DsResidualNonClean,
        BlockKind::FreqAdd,
        BlockKind::Isab,
        BlockKind::IsabPP,
    ] {
        for norm in [NormKind::None, NormKind::SetNorm] {
            let mut spec = BlockSpec::new(kind, 8).with_norm(norm);
            if kind.is_attention() {
                spec = spec.with_attention(2, 3);
            }
            let d_in = if matches!(kind, BlockKind::DsFeedforward | BlockKind::Isab) { 5 } else { 8 };
            let mut store = ParamStore::new();
            Block::build(&mut store, &mut rng(70), "b", &spec, d_in).unwrap();
            assert_eq!(store.trainable_count(), spec.param_count(d_in), "{kind:?} {norm:?}");
        }
    }
}
