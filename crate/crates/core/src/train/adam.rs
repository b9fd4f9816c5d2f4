use crate::autodiff::GradMap;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept only for trainable entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros = |_| None;
        Adam {
            cfg,
            m: (0..store.len()).map(zeros).collect(),
            v: (0..store.len()).map(zeros).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update. A non-finite gradient refuses the whole step and
    /// leaves parameters and moments untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradMap) -> Result<()> {
        if let Some((id, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for `{}`; step refused",
                store.get(id).name
            )));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (id, g) in grads.iter() {
            if !store.get(id).trainable {
                continue;
            }
            let shape = g.shape().to_vec();
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(&shape));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(&shape));
            let p = store.value_mut(id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamId;

    fn one_param(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_no_update() {
        let mut s = one_param(0.5);
        let mut adam = Adam::new(&s, AdamConfig::default());
        let mut g = GradMap::default();
        g.insert(ParamId(0), Tensor::scalar(0.0));
        adam.step(&mut s, &g).unwrap();
        assert_eq!(s.value(ParamId(0)).item(), 0.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = one_param(0.0);
        let mut adam = Adam::new(&s, AdamConfig::default());
        let mut g = GradMap::default();
        g.insert(ParamId(0), Tensor::scalar(3.0));
        adam.step(&mut s, &g).unwrap();
        let moved = s.value(ParamId(0)).item();
        assert!((moved + 1e-4).abs() < 1e-11, "{moved}");
    }

    #[test]
    fn nan_gradient_refused() {
        let mut s = one_param(1.0);
        let mut adam = Adam::new(&s, AdamConfig::default());
        let mut g = GradMap::default();
        g.insert(ParamId(0), Tensor::scalar(f64::NAN));
        assert!(matches!(adam.step(&mut s, &g), Err(Error::Numeric(_))));
        assert_eq!(s.value(ParamId(0)).item(), 1.0);
        assert_eq!(adam.steps(), 0);
    }
}
