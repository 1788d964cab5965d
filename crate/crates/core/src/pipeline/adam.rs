use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};

/// Bias-corrected Adam over the trainable entries of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moments of parameter `i`, once it has been stepped.
    pub fn moments(&self, i: usize) -> Option<(&Tensor, &Tensor)> {
        Some((self.m.get(i)?.as_ref()?, self.v.get(i)?.as_ref()?))
    }

    /// Applies one update from the gradients accumulated in `store`.
    ///
    /// Non-finite gradients abort the step before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().filter(|&id| store.entry(id).trainable).collect();
        if ids.iter().any(|&id| !store.grad(id).is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.m.resize(store.len(), None);
        self.v.resize(store.len(), None);
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in ids {
            let i = id.index();
            let g = store.grad(id).clone();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
            let p = store.get_mut(id).data_mut();
            for (k, &gk) in g.data().iter().enumerate() {
                let mk = &mut m.data_mut()[k];
                *mk = b1 * *mk + (1.0 - b1) * gk;
                let mhat = *mk / c1;
                let vk = &mut v.data_mut()[k];
                *vk = b2 * *vk + (1.0 - b2) * gk * gk;
                let vhat = *vk / c2;
                p[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales accumulated gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let n = store.grad_norm();
    if n > max_norm {
        store.scale_grads(max_norm / n);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(&[1.0, -2.0]));
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
        store.accumulate(&[(x, Tensor::row(&[1.0, 1.0]))]);
        opt.step(&mut store).unwrap();
        let before = store.get(x).clone();
        let m1 = opt.moments(0).unwrap().0.clone();
        store.zero_grads();
        opt.step(&mut store).unwrap();
        // m̂ is nonzero from the first step, so the parameter still moves;
        // the raw moments decay by exactly beta1.
        let (m2, _) = opt.moments(0).unwrap();
        assert_eq!(m2.data()[0], 0.9 * m1.data()[0]);
        let mut frozen = ParamStore::new();
        let y = frozen.add("y", Tensor::row(&[3.0]));
        let mut fresh = Adam::new(0.1, 0.9, 0.999, 1e-8);
        fresh.step(&mut frozen).unwrap();
        assert_eq!(frozen.get(y).data(), &[3.0]);
        assert_ne!(store.get(x), &before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(&[0.0, 0.0, 0.0]));
        store.accumulate(&[(x, Tensor::row(&[3.0, -0.02, 50.0]))]);
        let mut opt = Adam::new(0.01, 0.9, 0.999, 1e-8);
        opt.step(&mut store).unwrap();
        for (p, s) in store.get(x).data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((p - 0.01 * s).abs() < 1e-6, "{p}");
        }
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(&[1.0, 1.0]));
        let mut opt = Adam::new(0.05, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            store.zero_grads();
            let g = store.get(x).map(|v| 2.0 * v);
            store.accumulate(&[(x, g)]);
            opt.step(&mut store).unwrap();
        }
        assert!(store.get(x).norm_sq().sqrt() < 1e-3);
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(&[1.0]));
        store.accumulate(&[(x, Tensor::row(&[f64::NAN]))]);
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
        assert!(opt.step(&mut store).is_err());
        assert_eq!(store.get(x).data(), &[1.0]);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(&[0.0, 0.0]));
        store.accumulate(&[(x, Tensor::row(&[30.0, 40.0]))]);
        assert_eq!(clip_grad_norm(&mut store, 10.0), 50.0);
        assert!((store.grad_norm() - 10.0).abs() < 1e-12);
    }
}
