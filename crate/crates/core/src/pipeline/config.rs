use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::extensions::{ExtensionSpec, ExtensionVariant};
use crate::flows::{ArchName, ArchitectureSpec};
use crate::koopman::ModelSpec;
use crate::numcore::Activation;

/// How `K` is set before the first gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KInit {
    Identity,
    /// Least-squares fit on the encoded training pairs.
    #[default]
    Edmd,
}

mod extension_opt {
    use super::ExtensionVariant;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<ExtensionVariant>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(v.map_or("none", ExtensionVariant::as_str))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<ExtensionVariant>, D::Error> {
        let s: Option<String> = Option::deserialize(d)?;
        match s.as_deref() {
            None | Some("none") => Ok(None),
            Some(name) => name.parse().map(Some).map_err(serde::de::Error::custom),
        }
    }
}

fn d_arch() -> ArchName {
    ArchName::Realnvp
}
fn d_depth() -> usize {
    4
}
fn d_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn d_clamp() -> f64 {
    2.0
}
fn d_lipschitz() -> f64 {
    0.9
}
fn d_tol() -> f64 {
    1e-9
}
fn d_max_iter() -> usize {
    200
}
fn d_delay() -> usize {
    4
}
fn d_horizon() -> usize {
    16
}
fn d_lambda() -> f64 {
    1.0
}
fn d_lr() -> f64 {
    1e-3
}
fn d_batch() -> usize {
    32
}
fn d_epochs() -> usize {
    200
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_clip() -> f64 {
    10.0
}
fn d_one() -> usize {
    1
}
fn d_true() -> bool {
    true
}
fn d_ridge() -> f64 {
    1e-8
}
fn d_output() -> PathBuf {
    PathBuf::from("runs")
}

/// One training run. Every field except `dataset` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d_arch")]
    pub architecture: ArchName,
    #[serde(default, with = "extension_opt")]
    pub extension: Option<ExtensionVariant>,
    /// Extension output size `m`; defaults to the embedded state size.
    #[serde(default)]
    pub extension_dim: Option<usize>,
    #[serde(default = "d_depth")]
    pub depth: usize,
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "d_clamp")]
    pub clamp: f64,
    #[serde(default = "d_lipschitz")]
    pub lipschitz: f64,
    #[serde(default = "d_tol")]
    pub inversion_tol: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default = "d_delay")]
    pub delay: usize,
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    pub dataset: PathBuf,
    #[serde(default = "d_output")]
    pub output_dir: PathBuf,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_clip")]
    pub grad_clip: f64,
    /// Keep every `subsample`-th sample of each trajectory.
    #[serde(default = "d_one")]
    pub subsample: usize,
    /// Cap on training windows drawn per epoch (all when unset).
    #[serde(default)]
    pub windows_per_epoch: Option<usize>,
    /// Drop samples before the fault clears.
    #[serde(default = "d_true")]
    pub crop_to_post_fault: bool,
    /// Trailing training trajectories held out for model selection.
    #[serde(default = "d_one")]
    pub validation_trajectories: usize,
    /// Re-encode the true state every this many steps during evaluation.
    #[serde(default)]
    pub teacher_forcing_interval: Option<usize>,
    #[serde(default)]
    pub k_init: KInit,
    #[serde(default = "d_ridge")]
    pub ridge: f64,
}

impl ExperimentConfig {
    /// Defaults for everything but the dataset path.
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        let json = serde_json::json!({ "dataset": dataset.into() });
        serde_json::from_value(json).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let positive = [
            ("depth", self.depth),
            ("delay", self.delay),
            ("horizon", self.horizon),
            ("batch_size", self.batch_size),
            ("subsample", self.subsample),
            ("max_iter", self.max_iter),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes must be a non-empty list of positive sizes".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) || !(self.grad_clip > 0.0) {
            return bad("eps and grad_clip must be positive".into());
        }
        if !(self.ridge >= 0.0) {
            return bad(format!("ridge must be >= 0, got {}", self.ridge));
        }
        if self.windows_per_epoch == Some(0) || self.teacher_forcing_interval == Some(0) {
            return bad("windows_per_epoch and teacher_forcing_interval must be >= 1 when set".into());
        }
        if self.extension_dim == Some(0) {
            return bad("extension_dim must be >= 1 when set".into());
        }
        // The real state size is only known once the dataset is loaded.
        self.arch_spec(2).validate()
    }

    /// Flow description for embedded states of size `dim`.
    pub fn arch_spec(&self, dim: usize) -> ArchitectureSpec {
        let mut spec = ArchitectureSpec::new(self.architecture, dim, self.depth, self.hidden.clone());
        spec.activation = self.activation;
        spec.clamp = self.clamp;
        spec.lipschitz = self.lipschitz;
        spec.inversion_tol = self.inversion_tol;
        spec.max_iter = self.max_iter;
        spec.seed = self.seed;
        spec
    }

    pub fn model_spec(&self, dim: usize) -> ModelSpec {
        ModelSpec {
            flow: self.arch_spec(dim),
            extension: self.extension.map(|v| {
                let mut e = ExtensionSpec::new(v);
                e.dim = self.extension_dim;
                e
            }),
            seed: self.seed,
        }
    }

    /// SHA-256 of the canonical JSON with the output directory removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(serde_json::to_vec(&c).expect("config serializes"));
        hex::encode(digest)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.hash()[..16])
    }

    pub fn extension_label(&self) -> &'static str {
        self.extension.map_or("none", ExtensionVariant::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = ExperimentConfig::new("data");
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.epochs, 200);
        assert_eq!((c.beta1, c.beta2, c.eps), (0.9, 0.999, 1e-8));
        assert_eq!((c.horizon, c.delay), (16, 4));
        assert_eq!(c.grad_clip, 10.0);
        assert_eq!(c.extension, None);
        c.validate().unwrap();
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mut c = ExperimentConfig::new("d");
        c.extension = Some(ExtensionVariant::RbfKernel);
        c.learning_rate = 0.1 + 0.2;
        c.windows_per_epoch = Some(100);
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn schema_violations_are_config_errors() {
        let err = ExperimentConfig::from_json(r#"{"dataset": "d", "lr": 0.1}"#).unwrap_err();
        assert!(err.is_usage());
        assert!(ExperimentConfig::from_json(r#"{"epochs": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"dataset": "d", "architecture": "glow"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"dataset": "d", "beta1": 1.0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"dataset": "d", "hidden": []}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"dataset": "d", "extension": "none"}"#).unwrap();
        assert_eq!(c.extension, None);
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::new("d");
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.run_dir().file_name().unwrap().len(), 16);
    }
}
