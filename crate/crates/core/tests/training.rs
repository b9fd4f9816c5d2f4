use setnet::autodiff::{GradMap, Tape};
use setnet::data::{generate, population_variance, GenSpec, SetDataset, Targets, Task};
use setnet::model::{Family, Model, ModelConfig};
use setnet::norm::NormKind;
use setnet::params::{Mode, ParamStore};
use setnet::tensor::Tensor;
use setnet::train::{
    batch_gradients, cross_entropy_loss, evaluate, mse_loss, train, Adam, AdamConfig, LossKind, TrainConfig,
    METRICS_HEADER,
};
use setnet::Error;

fn normal_var(n: usize, m: usize, seed: u64, split: u32) -> SetDataset {
    generate(&GenSpec::new(Task::NormalVar, n, m, seed).with_split(split)).unwrap()
}

fn small_model(family: Family, seed: u64) -> Model {
    Model::build(&ModelConfig::new(family, 1, 2, 8).with_attention(2, 4).with_seed(seed)).unwrap()
}

/// Each set collapsed to a single element carrying its mean and variance.
fn oracle_features(ds: &SetDataset) -> SetDataset {
    let mut x = Vec::with_capacity(ds.n_sets() * 2);
    for i in 0..ds.n_sets() {
        let s = ds.set(i);
        x.push(s.iter().sum::<f64>() / s.len() as f64 / 10.0);
        x.push(population_variance(s) / 10.0);
    }
    SetDataset::new(Tensor::new(&[ds.n_sets(), 1, 2], x).unwrap(), ds.targets().clone(), ds.metadata().clone()).unwrap()
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let (tr, te) = (normal_var(20, 5, 0, 0), normal_var(10, 5, 0, 1));
    let mut m = small_model(Family::DeepSetsPp, 0);
    let before = m.to_bytes().unwrap();
    let h = train(&mut m, &tr, &te, &TrainConfig::new(0), None).unwrap();
    assert!(h.rows.is_empty() && h.diverged.is_none());
    assert_eq!(m.to_bytes().unwrap(), before);
    assert_eq!(h.to_csv(), format!("{METRICS_HEADER}\n"));
}

#[test]
fn oracle_feature_model_learns_normal_var() {
    let tr = oracle_features(&normal_var(4000, 20, 1, 0));
    let te = oracle_features(&normal_var(500, 20, 1, 1));
    let mut m = Model::build(&ModelConfig::new(Family::DeepSets, 2, 1, 16).with_seed(2)).unwrap();
    let mut cfg = TrainConfig::new(5);
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-2;
    let h = train(&mut m, &tr, &te, &cfg, None).unwrap();
    let mse = h.final_test_loss().unwrap();
    assert!(mse < 1e-3, "test mse {mse}");
}

#[test]
fn identical_runs_give_identical_history_and_weights() {
    let (tr, te) = (normal_var(40, 6, 3, 0), normal_var(20, 6, 3, 1));
    let mut cfg = TrainConfig::new(3);
    cfg.batch_size = 8;
    cfg.seed = 4;
    let run = || {
        let mut m = small_model(Family::SetTransformerPp, 5);
        let h = train(&mut m, &tr, &te, &cfg, None).unwrap();
        (h, m.to_bytes().unwrap())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.to_csv(), b.0.to_csv());
    assert_eq!(a.1, b.1);
    assert_eq!(a.0.rows.len(), 3);
    assert!(a.0.rows.iter().all(|r| r.wall_seconds == 0.0 && r.grad_norm_first > 0.0));
}

#[test]
fn epoch_callback_sees_every_row() {
    let (tr, te) = (normal_var(12, 4, 0, 0), normal_var(6, 4, 0, 1));
    let mut seen = Vec::new();
    let mut cb = |r: &setnet::train::EpochMetrics| seen.push(r.epoch);
    let mut m = small_model(Family::DeepSets, 0);
    let h = train(&mut m, &tr, &te, &TrainConfig::new(2), Some(&mut cb)).unwrap();
    assert_eq!(seen, vec![1, 2]);
    assert_eq!(h.to_csv().lines().count(), 3);
}

#[test]
fn one_step_lowers_the_batch_loss() {
    let ds = normal_var(16, 8, 7, 0);
    let idx: Vec<usize> = (0..16).collect();
    let (b, t) = ds.batch(&idx).unwrap();
    let mut decreased = 0;
    let trials = 20;
    for seed in 0..trials {
        let mut m = small_model(Family::DeepSetsPp, seed);
        let before = batch_gradients(&m, &b, &t, LossKind::Mse, Mode::Train, 64).unwrap();
        let mut adam = Adam::new(m.store(), AdamConfig { lr: 1e-3, ..AdamConfig::default() });
        adam.step(m.store_mut(), &before.grads).unwrap();
        let after = batch_gradients(&m, &b, &t, LossKind::Mse, Mode::Train, 64).unwrap();
        decreased += usize::from(after.loss < before.loss);
    }
    assert!(decreased as f64 >= 0.95 * trials as f64, "{decreased}/{trials}");
}

#[test]
fn chunked_gradients_equal_the_full_batch() {
    let ds = normal_var(10, 5, 2, 0);
    let (b, t) = ds.batch(&(0..10).collect::<Vec<_>>()).unwrap();
    let m = small_model(Family::SetTransformerPp, 1);
    let full = batch_gradients(&m, &b, &t, LossKind::Mse, Mode::Train, 10).unwrap();
    let split = batch_gradients(&m, &b, &t, LossKind::Mse, Mode::Train, 3).unwrap();
    assert!((full.loss - split.loss).abs() < 1e-12);
    for (id, g) in full.grads.iter() {
        assert!(g.max_abs_diff(split.grads.get(id).unwrap()) < 1e-12);
    }
}

#[test]
fn batch_independent_norms_ignore_the_mode() {
    let ds = normal_var(8, 5, 3, 0);
    let (b, t) = ds.batch(&(0..8).collect::<Vec<_>>()).unwrap();
    for norm in [NormKind::LayerNorm, NormKind::SetNorm] {
        let mut c = ModelConfig::new(Family::DeepSetsPp, 1, 2, 8);
        c.norm = Some(norm);
        let m = Model::build(&c).unwrap();
        let tr = batch_gradients(&m, &b, &t, LossKind::Mse, Mode::Train, 8).unwrap().loss;
        assert_eq!(tr, evaluate(&m, &ds, LossKind::Mse, 8).unwrap(), "{norm:?}");
    }
}

#[test]
fn exploding_loss_sets_the_divergence_flag() {
    let base = normal_var(16, 4, 0, 0);
    let Targets::Values { data, .. } = base.targets() else { unreachable!() };
    let huge = Targets::Values { width: 1, data: data.iter().map(|v| v * 1e8).collect() };
    let tr = SetDataset::new(base.inputs().clone(), huge, base.metadata().clone()).unwrap();
    let mut m = small_model(Family::DeepSets, 0);
    let h = train(&mut m, &tr, &tr, &TrainConfig::new(4), None).unwrap();
    let d = h.diverged.expect("diverged");
    assert_eq!(d.epoch, 1);
    assert!(h.rows.is_empty());
}

#[test]
fn incompatible_data_is_rejected() {
    let shapes = generate(&GenSpec::new(Task::ToyShapes, 8, 6, 0)).unwrap();
    let mut m = small_model(Family::DeepSets, 0);
    assert!(matches!(train(&mut m, &shapes, &shapes, &TrainConfig::new(1), None), Err(Error::Dimension(_))));
    let mut cfg = TrainConfig::new(1);
    cfg.beta1 = 1.0;
    let ds = normal_var(4, 4, 0, 0);
    assert!(matches!(train(&mut m, &ds, &ds, &cfg, None), Err(Error::Config { field, .. }) if field == "beta1"));
}

#[test]
fn adam_matches_a_hand_rolled_update() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::vector(vec![1.0, -2.0]));
    let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
    let mut adam = Adam::new(&store, cfg);
    let grads = [[0.5, -1.0], [0.25, 3.0], [-1.0, 0.0]];
    let (mut w, mut m, mut v) = ([1.0f64, -2.0], [0.0f64; 2], [0.0f64; 2]);
    for (t, g) in grads.iter().enumerate() {
        let mut gm = GradMap::default();
        gm.insert(id, Tensor::vector(g.to_vec()));
        adam.step(&mut store, &gm).unwrap();
        let t = t as i32 + 1;
        for k in 0..2 {
            m[k] = 0.9 * m[k] + 0.1 * g[k];
            v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
            let (mh, vh) = (m[k] / (1.0 - 0.9f64.powi(t)), v[k] / (1.0 - 0.999f64.powi(t)));
            w[k] -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        for k in 0..2 {
            assert!((store.value(id).data()[k] - w[k]).abs() < 1e-14, "step {t}");
        }
    }
    assert_eq!(adam.steps(), 3);
}

#[test]
fn losses_have_closed_form_values() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let l = mse_loss(&mut tape, p, &Tensor::new(&[2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap()).unwrap();
    assert_eq!(tape.value(l).item(), 1.0);
    assert!(mse_loss(&mut tape, p, &Tensor::zeros(&[4])).is_err());

    let logits = tape.constant(Tensor::zeros(&[3, 5])).unwrap();
    let ce = cross_entropy_loss(&mut tape, logits, &[0, 2, 4]).unwrap();
    assert!((tape.value(ce).item() - 5f64.ln()).abs() < 1e-12);
    let sharp = tape.constant(Tensor::new(&[1, 2], vec![50.0, 0.0]).unwrap()).unwrap();
    let ce = cross_entropy_loss(&mut tape, sharp, &[0]).unwrap();
    assert!(tape.value(ce).item() < 1e-6);
    assert!(cross_entropy_loss(&mut tape, sharp, &[2]).is_err());
}
