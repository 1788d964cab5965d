use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{clip_grad_norm, Adam};
use super::config::{ExperimentConfig, KInit};
use super::data::{snapshot_pairs, ExperimentData};
use crate::error::{Error, Result};
use crate::koopman::{edmd_fit, KoopmanModel, WindowBatch};
use crate::numcore::{seeded, Backend, Eval, ParamStore, SeededRng, Tape, Tensor};

/// Windows used for the epoch-0 history row and for validation are capped
/// at this many, spread evenly over the available starts.
const MONITOR_WINDOWS: usize = 512;
/// Rows used for ActNorm and RBF initialization.
const INIT_ROWS: usize = 4096;

/// One line of `history.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub pred_loss: f64,
    pub koop_loss: f64,
    pub total: f64,
    pub val_pred: f64,
}

pub const HISTORY_HEADER: &str = "epoch,pred_loss,koop_loss,total,val_pred";

impl HistoryRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e}",
            self.epoch, self.pred_loss, self.koop_loss, self.total, self.val_pred
        )
    }
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: KoopmanModel,
    pub store: ParamStore,
    pub history: Vec<HistoryRow>,
    /// Epoch whose parameters were kept (0 means the initialization).
    pub best_epoch: usize,
}

fn evenly_spaced<T: Copy>(items: &[T], cap: usize) -> Vec<T> {
    if items.len() <= cap {
        return items.to_vec();
    }
    (0..cap).map(|i| items[i * items.len() / cap]).collect()
}

fn stacked_rows(parts: &[&Tensor], cap: usize) -> Result<Tensor> {
    let all = super::data::stack(parts.iter().copied())?;
    let idx: Vec<usize> = evenly_spaced(&(0..all.rows()).collect::<Vec<_>>(), cap);
    Ok(all.select_rows(&idx))
}

/// Builds a model for `data`, initializes data-dependent layers and `K`,
/// then runs mini-batch Adam on the total loss.
///
/// The last `validation_trajectories` training trajectories are held out
/// when at least one other trajectory remains; otherwise validation uses
/// the training windows. Parameters from the epoch with the lowest
/// validation prediction loss are returned.
pub fn train(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<TrainOutcome> {
    cfg.validate()?;
    let p = data.embed_dim();
    let spec = cfg.model_spec(p);
    spec.flow.validate()?;
    let mut store = ParamStore::new();
    let model = KoopmanModel::build(&mut store, &spec)?;
    let mut rng = seeded(cfg.seed ^ 0x7EA1_0000);

    let all: Vec<&Tensor> = data.train.iter().map(|t| &t.embedded).collect();
    let hold = cfg.validation_trajectories.min(all.len().saturating_sub(1));
    let (fit, val) = all.split_at(all.len() - hold);
    let val = if val.is_empty() { fit } else { val };
    let fit_owned: Vec<Tensor> = fit.iter().map(|t| (*t).clone()).collect();
    let val_owned: Vec<Tensor> = val.iter().map(|t| (*t).clone()).collect();

    let starts = WindowBatch::all_starts(&fit_owned, cfg.horizon);
    if starts.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no training trajectory is longer than horizon {} after preparation",
            cfg.horizon
        )));
    }
    let val_starts = WindowBatch::all_starts(&val_owned, cfg.horizon);
    let val_batch = if val_starts.is_empty() {
        None
    } else {
        Some(WindowBatch::gather(
            &val_owned,
            &evenly_spaced(&val_starts, MONITOR_WINDOWS),
            cfg.horizon,
        )?)
    };
    let monitor = WindowBatch::gather(&fit_owned, &evenly_spaced(&starts, MONITOR_WINDOWS), cfg.horizon)?;

    initialize(&model, &mut store, cfg, fit, &mut rng)?;

    let val_pred = |store: &ParamStore| -> Result<f64> {
        let batch = val_batch.as_ref().unwrap_or(&monitor);
        let mut b = Eval::new(store);
        let (pred, _) = model.losses(&mut b, batch)?;
        Ok(pred.item())
    };

    let r0 = model.loss_report(&store, &monitor, cfg.lambda)?;
    let v0 = val_pred(&store)?;
    let mut history = vec![HistoryRow {
        epoch: 0,
        pred_loss: r0.prediction_loss,
        koop_loss: r0.koopman_loss,
        total: r0.total,
        val_pred: v0,
    }];
    if !v0.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            reason: "initial validation loss is not finite".into(),
        });
    }
    let (mut best, mut best_epoch, mut best_params) = (v0, 0, store.snapshot());

    let mut opt = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut order = starts.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let take = cfg.windows_per_epoch.unwrap_or(order.len()).min(order.len());
        let (mut sp, mut sk, mut st, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order[..take].chunks(cfg.batch_size) {
            let batch = WindowBatch::gather(&fit_owned, chunk, cfg.horizon)?;
            let (lp, lk, lt, grads) = {
                let mut tape = Tape::new(&store);
                let (pred, koop) = model.losses(&mut tape, &batch)?;
                let total = model.total(&mut tape, &pred, &koop, cfg.lambda)?;
                let grads = tape.backward(total)?;
                (
                    tape.value(&pred).item(),
                    tape.value(&koop).item(),
                    tape.value(&total).item(),
                    grads,
                )
            };
            if !lt.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "loss is not finite".into(),
                });
            }
            store.zero_grads();
            store.accumulate(grads.params());
            clip_grad_norm(&mut store, cfg.grad_clip);
            opt.step(&mut store).map_err(|e| Error::Diverged {
                epoch,
                reason: e.to_string(),
            })?;
            model.encoder.flow.power_iterate(&mut store, 1);
            let w = chunk.len() as f64;
            sp += lp * w;
            sk += lk * w;
            st += lt * w;
            seen += chunk.len();
        }
        let v = val_pred(&store)?;
        if !v.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "validation loss is not finite".into(),
            });
        }
        let n = seen as f64;
        history.push(HistoryRow {
            epoch,
            pred_loss: sp / n,
            koop_loss: sk / n,
            total: st / n,
            val_pred: v,
        });
        if v < best {
            best = v;
            best_epoch = epoch;
            best_params = store.snapshot();
        }
    }
    store.restore(best_params);
    store.zero_grads();
    Ok(TrainOutcome {
        model,
        store,
        history,
        best_epoch,
    })
}

/// ActNorm statistics, RBF centers and the starting `K`.
fn initialize(
    model: &KoopmanModel,
    store: &mut ParamStore,
    cfg: &ExperimentConfig,
    fit: &[&Tensor],
    rng: &mut SeededRng,
) -> Result<()> {
    let rows = stacked_rows(fit, INIT_ROWS)?;
    model.encoder.flow.init_actnorm(store, &rows)?;
    model.encoder.flow.power_iterate(store, 30);
    if let Some(ext) = &model.encoder.extension {
        ext.setup(store, &rows, rng)?;
    }
    if cfg.k_init == KInit::Edmd {
        let encoded: Vec<Tensor> = fit
            .iter()
            .map(|t| model.encoder.encode_values(store, t))
            .collect::<Result<_>>()?;
        let (z0, z1) = snapshot_pairs(&encoded)?;
        match edmd_fit(&z0, &z1, cfg.ridge) {
            Ok(k) if k.is_finite() => store.set(model.k, k)?,
            // Keep the identity when the encoded pairs are rank deficient.
            Ok(_) | Err(Error::Singular(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}
