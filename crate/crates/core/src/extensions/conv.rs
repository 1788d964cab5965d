use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numcore::{Activation, Backend, Eval, GatherMap, ParamId, ParamStore, SeededRng, Tensor};
use rand::Rng;

/// One kernel width with `channels` output channels.
#[derive(Debug, Clone)]
pub struct ConvBank {
    pub width: usize,
    pub channels: usize,
    /// `width × channels`
    pub weight: ParamId,
    /// `1 × channels`
    pub bias: ParamId,
}

/// Explicit kernels for [`multiscale_conv_features`].
#[derive(Debug, Clone)]
pub struct KernelBank {
    pub width: usize,
    /// `width × channels`; column `c` is the kernel of channel `c`.
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

/// Same-padded 1-D cross-correlation along the state axis, several widths,
/// channel activation, then a global average per channel.
#[derive(Debug, Clone)]
pub struct ConvExtension {
    pub in_dim: usize,
    pub banks: Vec<ConvBank>,
    pub activation: Activation,
}

impl ConvExtension {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        p: usize,
        m: usize,
        widths: &[usize],
        activation: Activation,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let fitting: Vec<usize> = widths.iter().copied().filter(|&w| w >= 1 && w <= p).collect();
        if fitting.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "no convolution width fits a state of dimension {p}"
            )));
        }
        let k = fitting.len();
        let mut banks = Vec::new();
        for (i, &w) in fitting.iter().enumerate() {
            let channels = m / k + usize::from(i < m % k);
            if channels == 0 {
                continue;
            }
            let a = (6.0 / (w + channels) as f64).sqrt();
            let data = (0..w * channels).map(|_| rng.random_range(-a..a)).collect();
            banks.push(ConvBank {
                width: w,
                channels,
                weight: store.add(format!("{prefix}.conv{w}.weight"), Tensor::new([w, channels], data)?),
                bias: store.add(format!("{prefix}.conv{w}.bias"), Tensor::zeros([1, channels])),
            });
        }
        Ok(Self {
            in_dim: p,
            banks,
            activation,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.banks.iter().map(|b| b.channels).sum()
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        let (n, p) = (b.rows(x), b.cols(x));
        if p != self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "conv extension",
                lhs: vec![self.in_dim],
                rhs: vec![p],
            });
        }
        let mut outs = Vec::with_capacity(self.banks.len());
        for bank in &self.banks {
            let cols = b.gather(x, Rc::new(im2col(n, p, bank.width)))?;
            let w = b.param(bank.weight);
            let bias = b.param(bank.bias);
            let pre = b.matmul(&cols, &w)?;
            let pre = b.add_row(&pre, &bias)?;
            let act = self.activation.apply(b, &pre)?;
            // (N·p × C) -> (N × p·C), then average the p positions per channel.
            let flat = b.reshape(&act, vec![n, p * bank.channels])?;
            let avg = b.constant(averaging(p, bank.channels));
            outs.push(b.matmul(&flat, &avg)?);
        }
        let refs: Vec<&B::V> = outs.iter().collect();
        if refs.len() == 1 {
            return Ok(outs[0].clone());
        }
        b.concat_cols(&refs)
    }
}

/// Rows are (sample, position); columns are kernel taps.
fn im2col(n: usize, p: usize, w: usize) -> GatherMap {
    let r = w / 2;
    let mut src = Vec::with_capacity(n * p * w);
    for s in 0..n {
        for i in 0..p {
            for j in 0..w {
                let pos = i + j;
                src.push(if pos < r || pos - r >= p {
                    GatherMap::ZERO
                } else {
                    s * p + pos - r
                });
            }
        }
    }
    GatherMap {
        shape: vec![n * p, w],
        src,
        src_len: n * p,
    }
}

fn averaging(p: usize, channels: usize) -> Tensor {
    let mut t = Tensor::zeros([p * channels, channels]);
    for i in 0..p {
        for c in 0..channels {
            t.set(i * channels + c, c, 1.0 / p as f64);
        }
    }
    t
}

/// Features of a single state for explicitly given kernels.
pub fn multiscale_conv_features(x: &[f64], banks: &[KernelBank], activation: Activation) -> Result<Vec<f64>> {
    let p = x.len();
    let mut store = ParamStore::new();
    let mut conv = ConvExtension {
        in_dim: p,
        banks: Vec::new(),
        activation,
    };
    for (i, k) in banks.iter().enumerate() {
        if k.width > p {
            continue;
        }
        let channels = k.weights.cols();
        if k.weights.rows() != k.width || k.bias.len() != channels {
            return Err(Error::ShapeMismatch {
                op: "kernel bank",
                lhs: vec![k.width, channels],
                rhs: k.weights.shape().to_vec(),
            });
        }
        conv.banks.push(ConvBank {
            width: k.width,
            channels,
            weight: store.add(format!("k{i}.weight"), k.weights.clone()),
            bias: store.add(format!("k{i}.bias"), Tensor::row(&k.bias)),
        });
    }
    if conv.banks.is_empty() {
        return Ok(Vec::new());
    }
    let mut b = Eval::new(&store);
    let xv = b.constant(Tensor::row(x));
    Ok(conv.forward(&mut b, &xv)?.data().to_vec())
}
