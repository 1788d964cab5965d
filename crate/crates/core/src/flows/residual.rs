use rand::Rng;
use rand_distr::StandardNormal;

use super::coupling::Partition;
use crate::error::{Error, Result};
use crate::numcore::{Activation, Backend, Eval, Linear, Mlp, ParamId, ParamStore, SeededRng, Tensor};

/// Persistent power-iteration vectors for one `in × out` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerIteration {
    /// Left singular vector estimate, length `in`.
    pub u: Vec<f64>,
    /// Right singular vector estimate, length `out`.
    pub v: Vec<f64>,
}

impl PowerIteration {
    pub fn random(rows: usize, cols: usize, rng: &mut SeededRng) -> Self {
        let mut u: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        let mut v: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut u);
        normalize(&mut v);
        Self { u, v }
    }

    /// `u^T W v` for the current vectors.
    pub fn sigma(&self, w: &Tensor) -> f64 {
        let (r, c) = (w.rows(), w.cols());
        let mut s = 0.0;
        for i in 0..r {
            let row = &w.data()[i * c..(i + 1) * c];
            s += self.u[i] * row.iter().zip(&self.v).map(|(a, b)| a * b).sum::<f64>();
        }
        s
    }

    /// One or more power iterations; leaves the vectors untouched for a zero matrix.
    pub fn iterate(&mut self, w: &Tensor, iters: usize) {
        let (r, c) = (w.rows(), w.cols());
        for _ in 0..iters {
            let mut u: Vec<f64> = (0..r)
                .map(|i| {
                    w.data()[i * c..(i + 1) * c]
                        .iter()
                        .zip(&self.v)
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect();
            if !normalize(&mut u) {
                return;
            }
            let mut v = vec![0.0; c];
            for (i, &ui) in u.iter().enumerate() {
                for (j, vj) in v.iter_mut().enumerate() {
                    *vj += w.data()[i * c + j] * ui;
                }
            }
            if !normalize(&mut v) {
                return;
            }
            self.u = u;
            self.v = v;
        }
    }
}

fn normalize(x: &mut [f64]) -> bool {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n <= f64::MIN_POSITIVE || !n.is_finite() {
        return false;
    }
    x.iter_mut().for_each(|v| *v /= n);
    true
}

/// Runs `iters` power iterations on `weight`, then returns
/// `weight * min(1, c / sigma)` with `sigma` the updated estimate.
pub fn spectral_normalize(weight: &Tensor, state: &mut PowerIteration, c: f64, iters: usize) -> Result<Tensor> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Lipschitz target must lie in (0, 1), got {c}"
        )));
    }
    if iters == 0 {
        return Err(Error::InvalidArgument("need at least one power iteration".into()));
    }
    state.iterate(weight, iters);
    let sigma = state.sigma(weight);
    if sigma > c {
        let f = c / sigma;
        Ok(weight.map(|w| w * f))
    } else {
        Ok(weight.clone())
    }
}

/// Linear layer whose weight is spectrally normalized on every use.
#[derive(Debug, Clone)]
pub struct SnLinear {
    pub linear: Linear,
    pub u: ParamId,
    pub v: ParamId,
}

impl SnLinear {
    fn state(&self, store: &ParamStore) -> PowerIteration {
        PowerIteration {
            u: store.get(self.u).data().to_vec(),
            v: store.get(self.v).data().to_vec(),
        }
    }

    /// Normalized weight, differentiable through `sigma = u^T W v` with `u, v` fixed.
    fn weight<B: Backend>(&self, b: &mut B, c: f64) -> Result<B::V> {
        let w = b.param(self.linear.weight);
        let u = b.param(self.u);
        let v = b.param(self.v);
        let uw = b.matmul(&u, &w)?;
        let sigma = b.matmul(&uw, &v)?;
        if b.value(&sigma).item() > c {
            let cv = b.constant(Tensor::scalar(c));
            let f = b.div(&cv, &sigma)?;
            b.mul(&w, &f)
        } else {
            Ok(w)
        }
    }
}

/// Outcome of a fixed-point inversion.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub x: Tensor,
    pub iterations: usize,
    /// `max |x_k + F(x_k) - y|` before each update.
    pub residuals: Vec<f64>,
}

/// iResNet block `g(x) = x + F(x)` with `Lip(F) < 1` via spectral normalization.
#[derive(Debug, Clone)]
pub struct SpectralResidualBlock {
    pub layers: Vec<SnLinear>,
    pub activation: Activation,
    pub lipschitz: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Fixed-point steps replayed on the tape to carry gradients through the inverse.
    pub unroll: usize,
}

impl SpectralResidualBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: &[usize],
        lipschitz: f64,
        tol: f64,
        max_iter: usize,
        unroll: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let lname = format!("{name}.f.{i}");
                let linear = Linear::new(store, &lname, sizes[i], sizes[i + 1], rng, i == n - 1);
                let pi = PowerIteration::random(sizes[i], sizes[i + 1], rng);
                let u = store.add_buffer(format!("{lname}.u"), Tensor::row(&pi.u));
                let v = store.add_buffer(format!("{lname}.v"), Tensor::new([pi.v.len(), 1], pi.v).expect("shape"));
                SnLinear { linear, u, v }
            })
            .collect();
        let block = Self {
            layers,
            // tanh keeps each layer 1-Lipschitz, so Lip(F) <= c^depth < 1.
            activation: Activation::Tanh,
            lipschitz,
            tol,
            max_iter,
            unroll,
        };
        block.power_iterate(store, 30);
        block
    }

    /// Advances every power-iteration state; call once per training step.
    pub fn power_iterate(&self, store: &mut ParamStore, iters: usize) {
        for l in &self.layers {
            let mut st = l.state(store);
            st.iterate(store.get(l.linear.weight), iters);
            store.get_mut(l.u).data_mut().copy_from_slice(&st.u);
            store.get_mut(l.v).data_mut().copy_from_slice(&st.v);
        }
    }

    /// Normalized weights as plain tensors.
    pub fn normalized_weights(&self, store: &ParamStore) -> Result<Vec<Tensor>> {
        let mut b = Eval::new(store);
        self.layers
            .iter()
            .map(|l| l.weight(&mut b, self.lipschitz).map(|w| (*w).clone()))
            .collect()
    }

    /// Estimated spectral norm of each normalized weight.
    pub fn spectral_estimates(&self, store: &ParamStore) -> Result<Vec<f64>> {
        let ws = self.normalized_weights(store)?;
        Ok(self
            .layers
            .iter()
            .zip(&ws)
            .map(|(l, w)| l.state(store).sigma(w))
            .collect())
    }

    pub fn residual<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let w = l.weight(b, self.lipschitz)?;
            h = l.linear.forward_with(b, &h, &w)?;
            if i < last {
                h = self.activation.apply(b, &h)?;
            }
        }
        Ok(h)
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        let f = self.residual(b, x)?;
        b.add(x, &f)
    }

    /// Banach iteration `x <- y - F(x)` from `x_0 = y`.
    pub fn invert(&self, store: &ParamStore, y: &Tensor, tol: f64, max_iter: usize) -> Result<Inversion> {
        let mut b = Eval::new(store);
        let yv = b.constant(y.clone());
        let mut x = yv.clone();
        let mut residuals = Vec::new();
        for k in 1..=max_iter {
            let f = self.residual(&mut b, &x)?;
            let next = b.sub(&yv, &f)?;
            let r = x.max_abs_diff(&next);
            residuals.push(r);
            x = next;
            if r <= tol {
                return Ok(Inversion {
                    x: (*x).clone(),
                    iterations: k,
                    residuals,
                });
            }
        }
        Err(Error::NoConvergence {
            iterations: max_iter,
            residual: residuals.last().copied().unwrap_or(f64::NAN),
        })
    }

    pub fn inverse<B: Backend>(&self, b: &mut B, y: &B::V) -> Result<B::V> {
        let inv = self.invert(b.store(), b.value(y), self.tol, self.max_iter)?;
        let mut x = b.constant(inv.x);
        if b.is_recording() {
            // Truncated Neumann series for d x / d(y, theta) around the solution.
            for _ in 0..self.unroll {
                let f = self.residual(b, &x)?;
                x = b.sub(y, &f)?;
            }
        }
        Ok(x)
    }

    /// `log|det(I + J_F(x))|` per row, from the explicit Jacobian.
    pub fn log_det(&self, store: &ParamStore, x: &Tensor) -> Result<Vec<f64>> {
        let ws = self.normalized_weights(store)?;
        let d = x.cols();
        let mut out = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            // Row-vector convention: J = W_1 D_1 W_2 ... W_n maps dx (row) to dF (row).
            let mut h = Tensor::row(x.row_slice(r));
            let mut jac = Tensor::identity(d);
            let last = self.layers.len() - 1;
            for (i, (l, w)) in self.layers.iter().zip(&ws).enumerate() {
                let bias = store.get(l.linear.bias);
                let pre = h.matmul(w)?;
                let pre = Tensor::new(
                    pre.shape().to_vec(),
                    pre.data().iter().zip(bias.data()).map(|(a, b)| a + b).collect(),
                )?;
                jac = jac.matmul(w)?;
                if i < last {
                    let act = pre.map(f64::tanh);
                    let cols = jac.cols();
                    for row in 0..jac.rows() {
                        for c in 0..cols {
                            let dv = 1.0 - act.data()[c] * act.data()[c];
                            let v = jac.get(row, c) * dv;
                            jac.set(row, c, v);
                        }
                    }
                    h = act;
                } else {
                    h = pre;
                }
            }
            let m = nalgebra::DMatrix::from_fn(d, d, |i, j| jac.get(i, j) + if i == j { 1.0 } else { 0.0 });
            out.push(m.determinant().abs().ln());
        }
        Ok(out)
    }

    pub fn randomize(&self, store: &mut ParamStore, rng: &mut SeededRng, scale: f64) {
        for l in &self.layers {
            for id in [l.linear.weight, l.linear.bias] {
                let t = store.get(id).map(|_| rng.random_range(-scale..scale));
                store.set(id, t).expect("shape");
            }
        }
        self.power_iterate(store, 50);
    }
}

/// RevNet-style split residual: `y_A = x_A + F(x_B)`, `y_B = x_B + G(y_A)`.
#[derive(Debug, Clone)]
pub struct SplitResidualLayer {
    pub partition: Partition,
    pub f: Mlp,
    pub g: Mlp,
}

impl SplitResidualLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        partition: Partition,
        hidden: &[usize],
        activation: Activation,
        rng: &mut SeededRng,
    ) -> Self {
        let (na, nb) = (partition.a.len(), partition.b.len());
        let sizes = |i: usize, o: usize| {
            let mut s = vec![i];
            s.extend_from_slice(hidden);
            s.push(o);
            s
        };
        let f = Mlp::new(store, &format!("{name}.f"), &sizes(nb, na), activation, rng, true);
        let g = Mlp::new(store, &format!("{name}.g"), &sizes(na, nb), activation, rng, true);
        Self { partition, f, g }
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        let xa = b.select_cols(x, &self.partition.a)?;
        let xb = b.select_cols(x, &self.partition.b)?;
        let fx = self.f.forward(b, &xb)?;
        let ya = b.add(&xa, &fx)?;
        let gy = self.g.forward(b, &ya)?;
        let yb = b.add(&xb, &gy)?;
        self.partition.merge(b, &ya, &yb)
    }

    pub fn inverse<B: Backend>(&self, b: &mut B, y: &B::V) -> Result<B::V> {
        let ya = b.select_cols(y, &self.partition.a)?;
        let yb = b.select_cols(y, &self.partition.b)?;
        let gy = self.g.forward(b, &ya)?;
        let xb = b.sub(&yb, &gy)?;
        let fx = self.f.forward(b, &xb)?;
        let xa = b.sub(&ya, &fx)?;
        self.partition.merge(b, &xa, &xb)
    }

    pub fn randomize(&self, store: &mut ParamStore, rng: &mut SeededRng, scale: f64) {
        for id in self.f.params().into_iter().chain(self.g.params()) {
            let t = store.get(id).map(|_| rng.random_range(-scale..scale));
            store.set(id, t).expect("shape");
        }
    }
}
