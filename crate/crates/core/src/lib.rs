//! Koopman operator learning with invertible neural networks.
//!
//! The crate bundles everything needed to reproduce a comparison of
//! coupling flows, residual flows and hybrid (invertible plus extension)
//! encoders on simulated power-grid frequency trajectories:
//!
//! * [`numcore`]: dense f64 tensors with a reverse-mode tape.
//! * [`flows`]: invertible blocks and the NICE / RealNVP / All-In-One /
//!   iResNet / RevNet stacks built from them.
//! * [`extensions`]: non-invertible feature networks and the hybrid encoder.
//! * [`koopman`]: the latent operator, rollouts, losses and EDMD.
//! * [`gridsim`]: a swing-equation simulator with fault injection.
//! * [`pipeline`]: training, evaluation, metrics and experiment runs.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod extensions;
pub mod flows;
pub mod gridsim;
pub mod koopman;
pub mod numcore;
pub mod pipeline;

pub use error::{Error, Result};
pub use extensions::{ExtensionNet, ExtensionSpec, ExtensionVariant, HybridEncoder};
pub use flows::{ArchName, ArchitectureSpec, FlowStack};
pub use gridsim::{Dataset, FaultEvent, GridModel, Trajectory};
pub use koopman::{KoopmanModel, ModelSpec};
pub use numcore::{Backend, Eval, ParamId, ParamStore, Tape, Tensor};
pub use pipeline::{EvalReport, ExperimentConfig};
