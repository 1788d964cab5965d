use serde::{Deserialize, Serialize};

use super::data::{ExperimentData, PreparedTrajectory, SplitName};
use super::metrics::{invertibility_error, rrmse};
use crate::error::{Error, Result};
use crate::koopman::{rollout, spectral_radius, KoopmanModel};
use crate::numcore::{ParamStore, Tensor};

/// Rows used for the invertibility check, spread over the training states.
const INVERTIBILITY_ROWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScore {
    pub id: String,
    pub split: SplitName,
    pub rrmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub extension: String,
    /// Percent, pooled over every training trajectory.
    pub rrmse_train: f64,
    pub rrmse_test: f64,
    pub per_trajectory: Vec<TrajectoryScore>,
    pub invertibility_error: f64,
    pub spectral_radius: f64,
    pub epochs: usize,
    pub best_epoch: usize,
}

pub const REPORT_CSV_HEADER: &str =
    "model,extension,rrmse_train,rrmse_test,invertibility_error,spectral_radius,epochs,best_epoch";

impl EvalReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e},{},{},{}",
            self.model,
            self.extension,
            self.rrmse_train,
            self.rrmse_test,
            self.invertibility_error,
            self.spectral_radius,
            self.epochs,
            self.best_epoch
        )
    }

    pub fn csv(&self) -> String {
        format!("{REPORT_CSV_HEADER}\n{}\n", self.csv_row())
    }
}

/// Ground truth and rollout prediction for one trajectory, in original units.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub id: String,
    pub split: SplitName,
    pub times: Vec<f64>,
    pub truth: Tensor,
    pub pred: Tensor,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Re-encode the true embedded state every this many steps.
    pub teacher_forcing_interval: Option<usize>,
}

/// Encodes the first embedded state and advances `K` over the rest of the
/// trajectory, decoding every latent state. Row 0 is the reconstruction.
pub fn predict_trajectory(
    model: &KoopmanModel,
    store: &ParamStore,
    data: &ExperimentData,
    traj: &PreparedTrajectory,
    opts: EvalOptions,
) -> Result<Prediction> {
    let x = &traj.embedded;
    let len = x.rows();
    if len == 0 {
        return Err(Error::InvalidArgument(format!(
            "trajectory {} is shorter than the delay depth",
            traj.id
        )));
    }
    let k = model.koopman_matrix(store);
    let interval = opts.teacher_forcing_interval.unwrap_or(len);
    let mut latent: Vec<Vec<f64>> = Vec::with_capacity(len);
    let mut t = 0;
    while t < len {
        let z0 = model.encoder.encode_values(store, &Tensor::row(x.row_slice(t)))?;
        let steps = interval.min(len - t) - 1;
        latent.push(z0.data().to_vec());
        if steps > 0 {
            latent.extend(rollout(k, z0.data(), steps)?);
        }
        t += steps + 1;
    }
    let z = Tensor::from_rows(&latent)?;
    let xhat = model.encoder.decode_values(store, &z)?;
    let current = xhat.select_cols(&(0..data.n_bus).collect::<Vec<_>>());
    Ok(Prediction {
        id: traj.id.clone(),
        split: traj.split,
        times: traj.target_times(data.prep.delay).to_vec(),
        truth: traj.target(data.prep.delay),
        pred: data.norm.invert(&current),
    })
}

/// Full-horizon rollouts on every trajectory plus the aggregate metrics.
/// The model is only read.
pub fn evaluate(
    model: &KoopmanModel,
    store: &ParamStore,
    data: &ExperimentData,
    opts: EvalOptions,
) -> Result<(EvalReport, Vec<Prediction>)> {
    if data.test.is_empty() {
        return Err(Error::InvalidArgument(
            "evaluation needs at least one test trajectory".into(),
        ));
    }
    let preds: Vec<Prediction> = data
        .train
        .iter()
        .chain(&data.test)
        .map(|t| predict_trajectory(model, store, data, t, opts))
        .collect::<Result<_>>()?;
    let pooled = |split: SplitName| -> Result<f64> {
        let (truth, pred): (Vec<Tensor>, Vec<Tensor>) = preds
            .iter()
            .filter(|p| p.split == split)
            .map(|p| (p.truth.clone(), p.pred.clone()))
            .unzip();
        rrmse(&truth, &pred)
    };
    let per_trajectory = preds
        .iter()
        .map(|p| {
            Ok(TrajectoryScore {
                id: p.id.clone(),
                split: p.split,
                rrmse: rrmse(std::slice::from_ref(&p.truth), std::slice::from_ref(&p.pred))?,
            })
        })
        .collect::<Result<_>>()?;
    let states = data.train_states()?;
    let step = states.rows().div_ceil(INVERTIBILITY_ROWS).max(1);
    let samples = states.select_rows(&(0..states.rows()).step_by(step).collect::<Vec<_>>());
    let report = EvalReport {
        model: model.spec.flow.name.as_str().to_string(),
        extension: model
            .spec
            .extension
            .as_ref()
            .map_or("none", |e| e.variant.as_str())
            .to_string(),
        rrmse_train: pooled(SplitName::Train)?,
        rrmse_test: pooled(SplitName::Test)?,
        per_trajectory,
        invertibility_error: invertibility_error(&model.encoder.flow, store, &samples)?,
        spectral_radius: spectral_radius(model.koopman_matrix(store)),
        epochs: 0,
        best_epoch: 0,
    };
    Ok((report, preds))
}
