//! Invertible building blocks and the flow architectures assembled from them.

mod actnorm;
pub mod checkpoint;
mod coupling;
mod permutation;
mod residual;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use actnorm::ActNorm;
pub use checkpoint::{Checkpoint, CheckpointEntry};
pub use coupling::{CouplingLayer, CouplingMode, Partition};
pub use permutation::PermutationLayer;
pub use residual::{
    spectral_normalize, Inversion, PowerIteration, SnLinear, SpectralResidualBlock, SplitResidualLayer,
};

use crate::error::{Error, Result};
use crate::numcore::{seeded, Activation, Backend, Eval, ParamStore, SeededRng, Tensor};

/// One invertible block of a [`FlowStack`].
#[derive(Debug, Clone)]
pub enum Block {
    Coupling(CouplingLayer),
    ActNorm(ActNorm),
    Permutation(PermutationLayer),
    SpectralResidual(SpectralResidualBlock),
    SplitResidual(SplitResidualLayer),
}

impl Block {
    pub fn kind(&self) -> &'static str {
        match self {
            Block::Coupling(c) => match c.mode {
                CouplingMode::Additive => "additive_coupling",
                CouplingMode::Affine => "affine_coupling",
            },
            Block::ActNorm(_) => "actnorm",
            Block::Permutation(_) => "permutation",
            Block::SpectralResidual(_) => "spectral_residual",
            Block::SplitResidual(_) => "split_residual",
        }
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        match self {
            Block::Coupling(l) => l.forward(b, x),
            Block::ActNorm(l) => l.forward(b, x),
            Block::Permutation(l) => l.forward(b, x),
            Block::SpectralResidual(l) => l.forward(b, x),
            Block::SplitResidual(l) => l.forward(b, x),
        }
    }

    pub fn inverse<B: Backend>(&self, b: &mut B, y: &B::V) -> Result<B::V> {
        match self {
            Block::Coupling(l) => l.inverse(b, y),
            Block::ActNorm(l) => l.inverse(b, y),
            Block::Permutation(l) => l.inverse(b, y),
            Block::SpectralResidual(l) => l.inverse(b, y),
            Block::SplitResidual(l) => l.inverse(b, y),
        }
    }

    /// Per-row log|det J| of the forward map at `x`.
    pub fn log_det(&self, store: &ParamStore, x: &Tensor) -> Result<Vec<f64>> {
        match self {
            Block::Coupling(l) => l.log_det(store, x),
            Block::ActNorm(l) => Ok(l.log_det(store, x.rows())),
            Block::Permutation(_) | Block::SplitResidual(_) => Ok(vec![0.0; x.rows()]),
            Block::SpectralResidual(l) => l.log_det(store, x),
        }
    }
}

/// Ordered composition of invertible blocks on `R^dim`.
#[derive(Debug, Clone)]
pub struct FlowStack {
    pub dim: usize,
    pub blocks: Vec<Block>,
}

impl FlowStack {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            blocks: Vec::new(),
        }
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        self.check_dim(b.cols(x))?;
        let mut h = x.clone();
        for blk in &self.blocks {
            h = blk.forward(b, &h)?;
        }
        Ok(h)
    }

    pub fn inverse<B: Backend>(&self, b: &mut B, y: &B::V) -> Result<B::V> {
        self.check_dim(b.cols(y))?;
        let mut h = y.clone();
        for blk in self.blocks.iter().rev() {
            h = blk.inverse(b, &h)?;
        }
        Ok(h)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim {
            return Err(Error::ShapeMismatch {
                op: "flow",
                lhs: vec![self.dim],
                rhs: vec![d],
            });
        }
        Ok(())
    }

    pub fn forward_values(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut b = Eval::new(store);
        let xv = b.constant(x.clone());
        Ok((*self.forward(&mut b, &xv)?).clone())
    }

    pub fn inverse_values(&self, store: &ParamStore, y: &Tensor) -> Result<Tensor> {
        let mut b = Eval::new(store);
        let yv = b.constant(y.clone());
        Ok((*self.inverse(&mut b, &yv)?).clone())
    }

    /// Forward pass plus the per-row total log-determinant.
    pub fn forward_log_det(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut h = x.clone();
        let mut total = vec![0.0; x.rows()];
        for blk in &self.blocks {
            for (t, l) in total.iter_mut().zip(blk.log_det(store, &h)?) {
                *t += l;
            }
            let mut b = Eval::new(store);
            let hv = b.constant(h);
            h = (*blk.forward(&mut b, &hv)?).clone();
        }
        Ok((h, total))
    }

    /// Initializes every not-yet-initialized ActNorm from the activations of `batch`.
    pub fn init_actnorm(&self, store: &mut ParamStore, batch: &Tensor) -> Result<()> {
        let mut h = batch.clone();
        for blk in &self.blocks {
            if let Block::ActNorm(a) = blk {
                if !a.is_initialized(store) {
                    a.init_from_batch(store, &h)?;
                }
            }
            let mut b = Eval::new(store);
            let hv = b.constant(h);
            h = (*blk.forward(&mut b, &hv)?).clone();
        }
        Ok(())
    }

    /// Advances spectral-normalization power iterations.
    pub fn power_iterate(&self, store: &mut ParamStore, iters: usize) {
        for blk in &self.blocks {
            if let Block::SpectralResidual(r) = blk {
                r.power_iterate(store, iters);
            }
        }
    }

    /// Replaces all parameters by random values (test and benchmark helper).
    pub fn randomize(&self, store: &mut ParamStore, rng: &mut SeededRng, scale: f64) {
        for blk in &self.blocks {
            match blk {
                Block::Coupling(c) => c.randomize(store, rng, scale),
                Block::ActNorm(a) => a.randomize(store, rng),
                Block::Permutation(_) => {}
                Block::SpectralResidual(r) => r.randomize(store, rng, scale),
                Block::SplitResidual(s) => s.randomize(store, rng, scale),
            }
        }
    }

    pub fn is_coupling_based(&self) -> bool {
        !self.blocks.iter().any(|b| matches!(b, Block::SpectralResidual(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchName {
    Identity,
    Nice,
    Realnvp,
    Allinone,
    Iresnet,
    Revnet,
}

impl ArchName {
    pub const ALL: [ArchName; 6] = [
        ArchName::Identity,
        ArchName::Nice,
        ArchName::Realnvp,
        ArchName::Allinone,
        ArchName::Iresnet,
        ArchName::Revnet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchName::Identity => "identity",
            ArchName::Nice => "nice",
            ArchName::Realnvp => "realnvp",
            ArchName::Allinone => "allinone",
            ArchName::Iresnet => "iresnet",
            ArchName::Revnet => "revnet",
        }
    }

    /// Whether the inverse is exact algebra (as opposed to fixed-point iteration).
    pub fn exact_inverse(self) -> bool {
        self != ArchName::Iresnet
    }
}

impl fmt::Display for ArchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchName::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "architecture",
                name: s.to_string(),
            })
    }
}

fn default_clamp() -> f64 {
    2.0
}
fn default_lipschitz() -> f64 {
    0.9
}
fn default_tol() -> f64 {
    1e-9
}
fn default_max_iter() -> usize {
    200
}
fn default_unroll() -> usize {
    8
}

/// Declarative description of a flow, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub name: ArchName,
    pub dim: usize,
    pub depth: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_clamp")]
    pub clamp: f64,
    #[serde(default = "default_lipschitz")]
    pub lipschitz: f64,
    #[serde(default = "default_tol")]
    pub inversion_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_unroll")]
    pub unroll: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ArchitectureSpec {
    pub fn new(name: ArchName, dim: usize, depth: usize, hidden: Vec<usize>) -> Self {
        Self {
            name,
            dim,
            depth,
            hidden,
            activation: Activation::default(),
            clamp: default_clamp(),
            lipschitz: default_lipschitz(),
            inversion_tol: default_tol(),
            max_iter: default_max_iter(),
            unroll: default_unroll(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim == 0 {
            return bad("flow dimension must be positive".into());
        }
        if self.name != ArchName::Identity && self.depth == 0 {
            return bad("depth must be >= 1".into());
        }
        let coupling = matches!(
            self.name,
            ArchName::Nice | ArchName::Realnvp | ArchName::Allinone | ArchName::Revnet
        );
        if coupling && self.dim < 2 {
            return bad(format!("{} needs dimension >= 2, got {}", self.name, self.dim));
        }
        if !(self.clamp > 0.0) {
            return bad(format!("clamp must be positive, got {}", self.clamp));
        }
        if !(self.lipschitz > 0.0 && self.lipschitz < 1.0) {
            return bad(format!("lipschitz must lie in (0, 1), got {}", self.lipschitz));
        }
        if !(self.inversion_tol > 0.0) || self.max_iter == 0 {
            return bad("inversion tolerance and iteration budget must be positive".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden sizes must be positive".into());
        }
        Ok(())
    }
}

/// Builds a named architecture, registering its parameters under `prefix`.
///
/// Every architecture starts as the identity map: conditioner and residual
/// output layers are zero-initialized and ActNorm passes through until
/// initialized from data.
pub fn build_architecture(store: &mut ParamStore, prefix: &str, spec: &ArchitectureSpec) -> Result<FlowStack> {
    spec.validate()?;
    let mut rng = seeded(spec.seed ^ 0x5EED_F10E);
    let d = spec.dim;
    let mut blocks = Vec::new();
    let coupling = |store: &mut ParamStore, rng: &mut SeededRng, i: usize, mode| {
        Ok::<_, Error>(Block::Coupling(CouplingLayer::new(
            store,
            &format!("{prefix}.{}", blocks_name(i)),
            mode,
            Partition::halves(d, i % 2 == 1)?,
            &spec.hidden,
            spec.activation,
            spec.clamp,
            rng,
        )))
    };
    match spec.name {
        ArchName::Identity => {}
        ArchName::Nice => {
            for i in 0..spec.depth {
                blocks.push(coupling(store, &mut rng, i, CouplingMode::Additive)?);
            }
        }
        ArchName::Realnvp => {
            for i in 0..spec.depth {
                blocks.push(coupling(store, &mut rng, i, CouplingMode::Affine)?);
            }
        }
        ArchName::Allinone => {
            // The last shuffle undoes the product of the earlier ones, so the
            // freshly built stack is still the identity map.
            let mut perms: Vec<PermutationLayer> = (0..spec.depth.saturating_sub(1))
                .map(|_| PermutationLayer::random(d, &mut rng))
                .collect();
            let mut combined: Vec<usize> = (0..d).collect();
            for p in perms.iter().rev() {
                combined = combined.iter().map(|&j| p.perm[j]).collect();
            }
            perms.push(PermutationLayer::from_perm(
                PermutationLayer::from_perm(combined).inverse,
            ));
            for (i, perm) in perms.into_iter().enumerate() {
                blocks.push(Block::ActNorm(ActNorm::new(store, &format!("{prefix}.{i}.actnorm"), d)));
                blocks.push(Block::Permutation(perm));
                blocks.push(coupling(store, &mut rng, i, CouplingMode::Affine)?);
            }
        }
        ArchName::Iresnet => {
            for i in 0..spec.depth {
                blocks.push(Block::SpectralResidual(SpectralResidualBlock::new(
                    store,
                    &format!("{prefix}.{i}.iresnet"),
                    d,
                    &spec.hidden,
                    spec.lipschitz,
                    spec.inversion_tol,
                    spec.max_iter,
                    spec.unroll,
                    &mut rng,
                )));
            }
        }
        ArchName::Revnet => {
            for i in 0..spec.depth {
                blocks.push(Block::SplitResidual(SplitResidualLayer::new(
                    store,
                    &format!("{prefix}.{i}.revnet"),
                    Partition::halves(d, i % 2 == 1)?,
                    &spec.hidden,
                    spec.activation,
                    &mut rng,
                )));
            }
        }
    }
    Ok(FlowStack { dim: d, blocks })
}

fn blocks_name(i: usize) -> String {
    format!("{i}.coupling")
}
