use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{Backend, ParamId, ParamStore, SeededRng, Tensor};

/// Per-dimension affine map `y = s * x + b`.
///
/// Acts as the identity (`s = 1`, `b = 0`) until [`ActNorm::init_from_batch`]
/// runs on the first batch it sees.
#[derive(Debug, Clone)]
pub struct ActNorm {
    pub scale: ParamId,
    pub bias: ParamId,
    pub initialized: ParamId,
    pub dim: usize,
}

impl ActNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            scale: store.add(format!("{name}.scale"), Tensor::ones([1, dim])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([1, dim])),
            initialized: store.add_buffer(format!("{name}.initialized"), Tensor::scalar(0.0)),
            dim,
        }
    }

    pub fn is_initialized(&self, store: &ParamStore) -> bool {
        store.get(self.initialized).item() != 0.0
    }

    /// Data-dependent init: `s = 1/std`, `b = -mean/std` per column.
    pub fn init_from_batch(&self, store: &mut ParamStore, batch: &Tensor) -> Result<()> {
        let (n, d) = (batch.rows(), batch.cols());
        if d != self.dim {
            return Err(Error::ShapeMismatch {
                op: "actnorm_init",
                lhs: vec![self.dim],
                rhs: batch.shape().to_vec(),
            });
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "actnorm init needs at least 2 rows, got {n}"
            )));
        }
        let mut scale = Vec::with_capacity(d);
        let mut bias = Vec::with_capacity(d);
        for j in 0..d {
            let mean = (0..n).map(|i| batch.get(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (batch.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            if std <= 1e-8 {
                return Err(Error::Degenerate(format!(
                    "actnorm column {j} is constant (std {std:e})"
                )));
            }
            scale.push(1.0 / std);
            bias.push(-mean / std);
        }
        store.set(self.scale, Tensor::row(&scale))?;
        store.set(self.bias, Tensor::row(&bias))?;
        store.set(self.initialized, Tensor::scalar(1.0))?;
        Ok(())
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        let s = b.param(self.scale);
        let bias = b.param(self.bias);
        let y = b.mul_row(x, &s)?;
        b.add_row(&y, &bias)
    }

    pub fn inverse<B: Backend>(&self, b: &mut B, y: &B::V) -> Result<B::V> {
        let s = b.param(self.scale);
        let bias = b.param(self.bias);
        let ones = b.constant(Tensor::ones([b.rows(y), 1]));
        let tiled_b = b.matmul(&ones, &bias)?;
        let tiled_s = b.matmul(&ones, &s)?;
        let shifted = b.sub(y, &tiled_b)?;
        b.div(&shifted, &tiled_s)
    }

    pub fn log_det(&self, store: &ParamStore, rows: usize) -> Vec<f64> {
        let ld: f64 = store.get(self.scale).data().iter().map(|s| s.abs().ln()).sum();
        vec![ld; rows]
    }

    /// Random nonzero scales with random signs, random bias; marks initialized.
    pub fn randomize(&self, store: &mut ParamStore, rng: &mut SeededRng) {
        let s: Vec<f64> = (0..self.dim)
            .map(|_| {
                let m = rng.random_range(0.5..1.5);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let b: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        store.set(self.scale, Tensor::row(&s)).expect("shape");
        store.set(self.bias, Tensor::row(&b)).expect("shape");
        store.set(self.initialized, Tensor::scalar(1.0)).expect("shape");
    }
}
