//! Non-invertible feature extensions and the hybrid encoder that pairs them
//! with an invertible flow.
//!
//! The encoder outputs `z = [i(x) | a(x)]`. Only the first `p` coordinates
//! are ever read back when decoding, so the extension never has to be
//! inverted.

mod conv;
mod rbf;
mod residual;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use conv::{multiscale_conv_features, ConvBank, ConvExtension, KernelBank};
pub use rbf::{median_heuristic_gamma, rbf_features, RbfExtension};
pub use residual::{multitimescale_features, ResidualExtension};

use crate::error::{Error, Result};
use crate::flows::FlowStack;
use crate::numcore::{seeded, Activation, Backend, Eval, ParamStore, SeededRng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionVariant {
    MultiscaleConv,
    RbfKernel,
    #[serde(rename = "multitimescale_residual", alias = "multitimescale")]
    Multitimescale,
}

impl ExtensionVariant {
    pub const ALL: [ExtensionVariant; 3] = [
        ExtensionVariant::MultiscaleConv,
        ExtensionVariant::RbfKernel,
        ExtensionVariant::Multitimescale,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExtensionVariant::MultiscaleConv => "multiscale_conv",
            ExtensionVariant::RbfKernel => "rbf_kernel",
            ExtensionVariant::Multitimescale => "multitimescale_residual",
        }
    }
}

impl fmt::Display for ExtensionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExtensionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiscale_conv" | "conv" | "cnn" => Ok(ExtensionVariant::MultiscaleConv),
            "rbf_kernel" | "rbf" | "kernel" => Ok(ExtensionVariant::RbfKernel),
            "multitimescale_residual" | "multitimescale" | "residual" => Ok(ExtensionVariant::Multitimescale),
            _ => Err(Error::Unknown {
                kind: "extension",
                name: s.to_string(),
            }),
        }
    }
}

fn default_widths() -> Vec<usize> {
    vec![3, 5, 9]
}
fn default_blocks() -> usize {
    4
}
fn default_width() -> usize {
    64
}

/// Extension hyperparameters, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtensionSpec {
    pub variant: ExtensionVariant,
    /// Output dimension `m`; defaults to the input dimension.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_widths")]
    pub conv_widths: Vec<usize>,
    #[serde(default)]
    pub conv_activation: Activation,
    #[serde(default = "default_blocks")]
    pub residual_blocks: usize,
    #[serde(default = "default_width")]
    pub residual_width: usize,
}

impl ExtensionSpec {
    pub fn new(variant: ExtensionVariant) -> Self {
        Self {
            variant,
            dim: None,
            conv_widths: default_widths(),
            conv_activation: Activation::Silu,
            residual_blocks: default_blocks(),
            residual_width: default_width(),
        }
    }

    pub fn out_dim(&self, p: usize) -> usize {
        self.dim.unwrap_or(p)
    }
}

/// A non-invertible map `R^p -> R^m`.
#[derive(Debug, Clone)]
pub enum ExtensionNet {
    MultiscaleConv(ConvExtension),
    Rbf(RbfExtension),
    Multitimescale(ResidualExtension),
}

impl ExtensionNet {
    pub fn build(store: &mut ParamStore, prefix: &str, spec: &ExtensionSpec, p: usize, seed: u64) -> Result<Self> {
        let m = spec.out_dim(p);
        if m == 0 || p == 0 {
            return Err(Error::InvalidConfig("extension dimensions must be positive".into()));
        }
        let mut rng = seeded(seed ^ 0xE87E_4510);
        Ok(match spec.variant {
            ExtensionVariant::MultiscaleConv => ExtensionNet::MultiscaleConv(ConvExtension::new(
                store,
                prefix,
                p,
                m,
                &spec.conv_widths,
                spec.conv_activation,
                &mut rng,
            )?),
            ExtensionVariant::RbfKernel => ExtensionNet::Rbf(RbfExtension::new(store, prefix, p, m, &mut rng)),
            ExtensionVariant::Multitimescale => {
                if spec.residual_width == 0 {
                    return Err(Error::InvalidConfig("residual width must be positive".into()));
                }
                ExtensionNet::Multitimescale(ResidualExtension::new(
                    store,
                    prefix,
                    p,
                    m,
                    spec.residual_width,
                    spec.residual_blocks,
                    &mut rng,
                ))
            }
        })
    }

    pub fn variant(&self) -> ExtensionVariant {
        match self {
            ExtensionNet::MultiscaleConv(_) => ExtensionVariant::MultiscaleConv,
            ExtensionNet::Rbf(_) => ExtensionVariant::RbfKernel,
            ExtensionNet::Multitimescale(_) => ExtensionVariant::Multitimescale,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            ExtensionNet::MultiscaleConv(c) => c.in_dim,
            ExtensionNet::Rbf(r) => r.in_dim,
            ExtensionNet::Multitimescale(r) => r.in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            ExtensionNet::MultiscaleConv(c) => c.out_dim(),
            ExtensionNet::Rbf(r) => r.out_dim,
            ExtensionNet::Multitimescale(r) => r.out_dim,
        }
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        match self {
            ExtensionNet::MultiscaleConv(c) => c.forward(b, x),
            ExtensionNet::Rbf(r) => r.forward(b, x),
            ExtensionNet::Multitimescale(r) => r.forward(b, x),
        }
    }

    /// Data-dependent setup before training (RBF centers and bandwidth).
    pub fn setup(&self, store: &mut ParamStore, states: &Tensor, rng: &mut SeededRng) -> Result<()> {
        match self {
            ExtensionNet::Rbf(r) => r.setup(store, states, rng),
            _ => Ok(()),
        }
    }
}

/// Encoder `x -> [i(x) | a(x)]` with decoder `z -> i^{-1}(z[..p])`.
#[derive(Debug, Clone)]
pub struct HybridEncoder {
    pub flow: FlowStack,
    pub extension: Option<ExtensionNet>,
}

impl HybridEncoder {
    pub fn new(flow: FlowStack, extension: Option<ExtensionNet>) -> Result<Self> {
        if let Some(ext) = &extension {
            if ext.in_dim() != flow.dim {
                return Err(Error::InvalidConfig(format!(
                    "extension input {} does not match flow dimension {}",
                    ext.in_dim(),
                    flow.dim
                )));
            }
        }
        Ok(Self { flow, extension })
    }

    /// Ablation encoder: identity in place of the flow, latent `[x | a(x)]`.
    pub fn identity_ablation(p: usize, extension: Option<ExtensionNet>) -> Result<Self> {
        Self::new(FlowStack::identity(p), extension)
    }

    /// Invertible latent dimension `p`.
    pub fn invertible_dim(&self) -> usize {
        self.flow.dim
    }

    /// Extension dimension `m` (0 without extension).
    pub fn extension_dim(&self) -> usize {
        self.extension.as_ref().map_or(0, ExtensionNet::out_dim)
    }

    pub fn latent_dim(&self) -> usize {
        self.invertible_dim() + self.extension_dim()
    }

    pub fn encode<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        let zi = self.flow.forward(b, x)?;
        match &self.extension {
            None => Ok(zi),
            Some(ext) => {
                let za = ext.forward(b, x)?;
                b.concat_cols(&[&zi, &za])
            }
        }
    }

    /// Reads only the first `p` latent coordinates.
    pub fn decode<B: Backend>(&self, b: &mut B, z: &B::V) -> Result<B::V> {
        let q = b.cols(z);
        if q != self.latent_dim() {
            return Err(Error::ShapeMismatch {
                op: "decode",
                lhs: vec![self.latent_dim()],
                rhs: vec![q],
            });
        }
        let zi = if self.extension.is_some() {
            let keep: Vec<usize> = (0..self.invertible_dim()).collect();
            b.select_cols(z, &keep)?
        } else {
            z.clone()
        };
        self.flow.inverse(b, &zi)
    }

    pub fn encode_values(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut b = Eval::new(store);
        let xv = b.constant(x.clone());
        Ok((*self.encode(&mut b, &xv)?).clone())
    }

    pub fn decode_values(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        let mut b = Eval::new(store);
        let zv = b.constant(z.clone());
        Ok((*self.decode(&mut b, &zv)?).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{build_architecture, ArchName, ArchitectureSpec};
    use rand::Rng;

    #[test]
    fn identity_flow_without_extension_is_identity() {
        let store = ParamStore::new();
        let enc = HybridEncoder::identity_ablation(3, None).unwrap();
        let x = Tensor::row(&[1.0, -2.0, 0.25]);
        assert_eq!(enc.encode_values(&store, &x).unwrap(), x);
        assert_eq!(enc.decode_values(&store, &x).unwrap(), x);
    }

    #[test]
    fn rbf_center_at_input_appends_one() {
        let mut store = ParamStore::new();
        let mut spec = ExtensionSpec::new(ExtensionVariant::RbfKernel);
        spec.dim = Some(1);
        let ext = ExtensionNet::build(&mut store, "ext", &spec, 2, 0).unwrap();
        let x = Tensor::row(&[0.3, -0.7]);
        if let ExtensionNet::Rbf(r) = &ext {
            store.set(r.centers, x.clone()).unwrap();
        }
        let enc = HybridEncoder::identity_ablation(2, Some(ext)).unwrap();
        let z = enc.encode_values(&store, &x).unwrap();
        assert_eq!(z.data(), &[0.3, -0.7, 1.0]);
    }

    #[test]
    fn decode_ignores_extension_coordinates_bitwise() {
        let mut rng = seeded(21);
        for variant in ExtensionVariant::ALL {
            let mut store = ParamStore::new();
            let flow = build_architecture(
                &mut store,
                "flow",
                &ArchitectureSpec::new(ArchName::Realnvp, 10, 3, vec![12]),
            )
            .unwrap();
            flow.randomize(&mut store, &mut rng, 0.5);
            let ext = ExtensionNet::build(&mut store, "ext", &ExtensionSpec::new(variant), 10, 3).unwrap();
            let enc = HybridEncoder::new(flow, Some(ext)).unwrap();
            let data: Vec<f64> = (0..5 * 10).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x = Tensor::new([5, 10], data).unwrap();
            let z = enc.encode_values(&store, &x).unwrap();
            assert_eq!(z.cols(), 20);
            let base = enc.decode_values(&store, &z).unwrap();
            assert!(base.max_abs_diff(&x) < 1e-10);
            let mut zp = z.clone();
            for r in 0..5 {
                for c in 10..20 {
                    zp.set(r, c, rng.random_range(-1e6..1e6));
                }
            }
            let perturbed = enc.decode_values(&store, &zp).unwrap();
            let same = base
                .data()
                .iter()
                .zip(perturbed.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{variant}");
        }
    }

    #[test]
    fn mismatched_extension_rejected() {
        let mut store = ParamStore::new();
        let ext = ExtensionNet::build(
            &mut store,
            "e",
            &ExtensionSpec::new(ExtensionVariant::Multitimescale),
            4,
            0,
        )
        .unwrap();
        assert!(HybridEncoder::identity_ablation(5, Some(ext)).is_err());
        assert!("wavelet".parse::<ExtensionVariant>().is_err());
        assert_eq!(
            "cnn".parse::<ExtensionVariant>().unwrap(),
            ExtensionVariant::MultiscaleConv
        );
    }
}
