use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backend::Backend;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Tanh,
    Linear,
}

impl Activation {
    pub fn apply<B: Backend>(self, b: &mut B, x: &B::V) -> Result<B::V> {
        match self {
            Activation::Silu => b.silu(x),
            Activation::Tanh => b.tanh(x),
            Activation::Linear => Ok(x.clone()),
        }
    }
}

/// Affine map `x W + b` on row-major batches; `W` is `in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Glorot-uniform weights and zero bias; `zero` gives an all-zero weight.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut SeededRng,
        zero: bool,
    ) -> Self {
        let w = if zero {
            Tensor::zeros([fan_in, fan_out])
        } else {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
            Tensor::new([fan_in, fan_out], data).expect("shape")
        };
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([1, fan_out])),
            fan_in,
            fan_out,
        }
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        let w = b.param(self.weight);
        self.forward_with(b, x, &w)
    }

    /// Forward pass with a substitute weight (used by spectral normalization).
    pub fn forward_with<B: Backend>(&self, b: &mut B, x: &B::V, w: &B::V) -> Result<B::V> {
        let y = b.matmul(x, w)?;
        let bias = b.param(self.bias);
        b.add_row(&y, &bias)
    }
}

/// Fully connected network with an activation between layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `sizes = [in, hidden..., out]`. `zero_last` zero-initializes the output layer.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        activation: Activation,
        rng: &mut SeededRng,
        zero_last: bool,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                Linear::new(
                    store,
                    &format!("{name}.{i}"),
                    sizes[i],
                    sizes[i + 1],
                    rng,
                    zero_last && i == n - 1,
                )
            })
            .collect();
        Self { layers, activation }
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(b, &h)?;
            if i < last {
                h = self.activation.apply(b, &h)?;
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }
}
