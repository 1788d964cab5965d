//! Latent linear dynamics: the Koopman matrix, rollouts, the training
//! losses and least-squares (EDMD) fitting.

mod edmd;
mod window;

use serde::{Deserialize, Serialize};

pub use edmd::{edmd_fit, edmd_residual, spectral_radius};
pub use window::WindowBatch;

use crate::error::{Error, Result};
use crate::extensions::{ExtensionNet, ExtensionSpec, HybridEncoder};
use crate::flows::{build_architecture, ArchitectureSpec, Checkpoint};
use crate::numcore::{Backend, Eval, ParamId, ParamStore, Tensor};

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub flow: ArchitectureSpec,
    #[serde(default)]
    pub extension: Option<ExtensionSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn latent_dim(&self) -> usize {
        self.flow.dim + self.extension.as_ref().map_or(0, |e| e.out_dim(self.flow.dim))
    }
}

/// Hybrid encoder plus a dense `q × q` Koopman matrix, `q = p + m`.
#[derive(Debug, Clone)]
pub struct KoopmanModel {
    pub spec: ModelSpec,
    pub encoder: HybridEncoder,
    pub k: ParamId,
}

/// Loss values for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub prediction_loss: f64,
    pub koopman_loss: f64,
    pub total: f64,
    /// Prediction loss at each step `k = 1..=H`.
    pub per_horizon: Vec<f64>,
}

impl KoopmanModel {
    /// Registers all parameters in `store`; `K` starts at the identity.
    pub fn build(store: &mut ParamStore, spec: &ModelSpec) -> Result<Self> {
        let flow = build_architecture(store, "flow", &spec.flow)?;
        let p = spec.flow.dim;
        let extension = spec
            .extension
            .as_ref()
            .map(|e| ExtensionNet::build(store, "ext", e, p, spec.seed))
            .transpose()?;
        let encoder = HybridEncoder::new(flow, extension)?;
        let q = encoder.latent_dim();
        let k = store.add("koopman.K", Tensor::identity(q));
        Ok(Self {
            spec: spec.clone(),
            encoder,
            k,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, ParamStore)> {
        let spec: ModelSpec = serde_json::from_str(&ck.descriptor)
            .map_err(|e| Error::InvalidArgument(format!("checkpoint descriptor: {e}")))?;
        let mut store = ParamStore::new();
        let model = Self::build(&mut store, &spec)?;
        ck.apply_to(&mut store)?;
        Ok((model, store))
    }

    pub fn checkpoint(&self, store: &ParamStore) -> Checkpoint {
        let desc = serde_json::to_string(&self.spec).expect("spec serializes");
        Checkpoint::from_store(desc, store)
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.invertible_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    pub fn koopman_matrix<'a>(&self, store: &'a ParamStore) -> &'a Tensor {
        store.get(self.k)
    }

    /// Prediction and Koopman losses as graph values.
    ///
    /// All encodings are computed in one batched pass; rollouts use
    /// `Z K^T` row products, one per step.
    pub fn losses<B: Backend>(&self, b: &mut B, batch: &WindowBatch) -> Result<(B::V, B::V)> {
        let (n, h) = (batch.count, batch.horizon);
        let x = b.constant(batch.states.clone());
        let z = self.encoder.encode(b, &x)?;
        let k = b.param(self.k);
        let kt = b.transpose(&k)?;
        let mut cur = b.select_rows(&z, &(0..n).collect::<Vec<_>>())?;
        let mut preds = Vec::with_capacity(h);
        for _ in 0..h {
            cur = b.matmul(&cur, &kt)?;
            preds.push(cur.clone());
        }
        let refs: Vec<&B::V> = preds.iter().collect();
        let zhat = if refs.len() == 1 {
            preds[0].clone()
        } else {
            b.concat_rows(&refs)?
        };
        let future: Vec<usize> = (n..(h + 1) * n).collect();
        let ztrue = b.select_rows(&z, &future)?;
        let scale = 1.0 / (n * h) as f64;

        let dz = b.sub(&zhat, &ztrue)?;
        let dz = b.square(&dz)?;
        let koop = b.sum(&dz)?;
        let koop = b.scale(&koop, scale)?;

        let xhat = self.encoder.decode(b, &zhat)?;
        let xtrue = b.select_rows(&x, &future)?;
        let dx = b.sub(&xhat, &xtrue)?;
        let dx = b.square(&dx)?;
        let pred = b.sum(&dx)?;
        let pred = b.scale(&pred, scale)?;
        Ok((pred, koop))
    }

    /// `log1p(pred) + lambda log1p(koop)` on the graph.
    pub fn total<B: Backend>(&self, b: &mut B, pred: &B::V, koop: &B::V, lambda: f64) -> Result<B::V> {
        let lp = b.log1p(pred)?;
        let lk = b.log1p(koop)?;
        let lk = b.scale(&lk, lambda)?;
        b.add(&lp, &lk)
    }

    pub fn loss_report(&self, store: &ParamStore, batch: &WindowBatch, lambda: f64) -> Result<LossReport> {
        let mut b = Eval::new(store);
        let (pred, koop) = self.losses(&mut b, batch)?;
        let (n, h) = (batch.count, batch.horizon);
        let x = &batch.states;
        let z = self.encoder.encode_values(store, x)?;
        let k = store.get(self.k);
        let mut cur = z.select_rows(&(0..n).collect::<Vec<_>>());
        let mut per_horizon = Vec::with_capacity(h);
        for step in 1..=h {
            cur = cur.matmul(&k.transpose())?;
            let xhat = self.encoder.decode_values(store, &cur)?;
            let truth = x.select_rows(&(step * n..(step + 1) * n).collect::<Vec<_>>());
            let se: f64 = xhat
                .data()
                .iter()
                .zip(truth.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            per_horizon.push(se / n as f64);
        }
        let (pred, koop) = (pred.item(), koop.item());
        Ok(LossReport {
            prediction_loss: pred,
            koopman_loss: koop,
            total: total_loss(pred, koop, lambda)?,
            per_horizon,
        })
    }

    /// Encodes `x0`, advances `steps` times with `K` and decodes each state.
    /// Row 0 of the result is the reconstruction of `x0`.
    pub fn predict(&self, store: &ParamStore, x0: &[f64], steps: usize) -> Result<Tensor> {
        let z0 = self.encoder.encode_values(store, &Tensor::row(x0))?;
        let zs = rollout(store.get(self.k), z0.data(), steps)?;
        let mut rows = Vec::with_capacity(steps + 1);
        rows.push(z0.data().to_vec());
        rows.extend(zs);
        let z = Tensor::from_rows(&rows)?;
        self.encoder.decode_values(store, &z)
    }
}

/// `z_k = K z_{k-1}` for `k = 1..=h`, by repeated matrix-vector products.
pub fn rollout(k: &Tensor, z0: &[f64], h: usize) -> Result<Vec<Vec<f64>>> {
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(h);
    let mut z = z0.to_vec();
    for _ in 0..h {
        z = k.matvec(&z)?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rollout"));
        }
        out.push(z.clone());
    }
    Ok(out)
}

pub fn total_loss(pred: f64, koop: f64, lambda: f64) -> Result<f64> {
    if !(pred >= 0.0 && koop >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "loss components must be non-negative, got {pred} and {koop}"
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    Ok(pred.ln_1p() + lambda * koop.ln_1p())
}
