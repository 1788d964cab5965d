use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridsim::{delay_embed, Dataset, NormStats, Trajectory};
use crate::numcore::Tensor;

/// Which split a trajectory belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Test => "test",
        }
    }
}

/// How raw trajectories are turned into model inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preparation {
    pub delay: usize,
    pub subsample: usize,
    pub crop_to_post_fault: bool,
}

/// A trajectory after cropping, subsampling, normalization and embedding.
#[derive(Debug, Clone)]
pub struct PreparedTrajectory {
    pub id: String,
    pub split: SplitName,
    /// Time of each row of `raw`.
    pub times: Vec<f64>,
    /// Kept samples in original units, `T' × n`.
    pub raw: Tensor,
    /// Normalized delay embedding, `(T' − d + 1) × n·d`. Row `j` ends at raw row `j + d − 1`.
    pub embedded: Tensor,
}

impl PreparedTrajectory {
    /// Raw samples aligned with the embedded rows.
    pub fn target(&self, delay: usize) -> Tensor {
        self.raw.select_rows(&(delay - 1..self.raw.rows()).collect::<Vec<_>>())
    }

    pub fn target_times(&self, delay: usize) -> &[f64] {
        &self.times[delay - 1..]
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub n_bus: usize,
    pub prep: Preparation,
    pub norm: NormStats,
    pub train: Vec<PreparedTrajectory>,
    pub test: Vec<PreparedTrajectory>,
}

fn cropped(tr: &Trajectory, prep: &Preparation) -> (Vec<f64>, Tensor) {
    let start = if prep.crop_to_post_fault {
        tr.post_fault_start()
    } else {
        0
    };
    let rows: Vec<usize> = (start..tr.len()).step_by(prep.subsample).collect();
    let times = rows.iter().map(|&k| tr.time(k)).collect();
    (times, tr.states.select_rows(&rows))
}

impl ExperimentData {
    /// Uses the dataset's stored normalization (computed on its training split).
    pub fn from_dataset(ds: &Dataset, prep: Preparation) -> Result<Self> {
        Self::new(&ds.train, &ds.test, Some(ds.norm.clone()), prep)
    }

    /// Normalization defaults to statistics of the prepared training samples.
    pub fn new(train: &[Trajectory], test: &[Trajectory], norm: Option<NormStats>, prep: Preparation) -> Result<Self> {
        if prep.delay == 0 || prep.subsample == 0 {
            return Err(Error::InvalidArgument("delay and subsample must be >= 1".into()));
        }
        let Some(first) = train.first() else {
            return Err(Error::InvalidArgument("no training trajectories".into()));
        };
        let n_bus = first.n_bus();
        if let Some(bad) = train.iter().chain(test).find(|t| t.n_bus() != n_bus) {
            return Err(Error::InvalidArgument(format!(
                "trajectory {} has {} buses, expected {n_bus}",
                bad.id,
                bad.n_bus()
            )));
        }
        let norm = match norm {
            Some(n) => n,
            None => {
                let kept: Vec<Trajectory> = train
                    .iter()
                    .map(|t| Trajectory {
                        states: cropped(t, &prep).1,
                        ..t.clone()
                    })
                    .collect();
                NormStats::from_trajectories(&kept)?
            }
        };
        let prepare = |trs: &[Trajectory], split| -> Result<Vec<PreparedTrajectory>> {
            trs.iter()
                .map(|tr| {
                    let (times, raw) = cropped(tr, &prep);
                    let embedded = delay_embed(&norm.apply(&raw), prep.delay)
                        .map_err(|e| Error::InvalidArgument(format!("trajectory {}: {e}", tr.id)))?;
                    Ok(PreparedTrajectory {
                        id: tr.id.clone(),
                        split,
                        times,
                        raw,
                        embedded,
                    })
                })
                .collect()
        };
        Ok(Self {
            n_bus,
            train: prepare(train, SplitName::Train)?,
            test: prepare(test, SplitName::Test)?,
            norm,
            prep,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.n_bus * self.prep.delay
    }

    pub fn find(&self, id: &str) -> Option<&PreparedTrajectory> {
        self.train.iter().chain(&self.test).find(|t| t.id == id)
    }

    /// All embedded training rows stacked.
    pub fn train_states(&self) -> Result<Tensor> {
        stack(self.train.iter().map(|t| &t.embedded))
    }
}

pub(crate) fn stack<'a>(parts: impl Iterator<Item = &'a Tensor>) -> Result<Tensor> {
    let mut data = Vec::new();
    let (mut rows, mut cols) = (0, None);
    for t in parts {
        if *cols.get_or_insert(t.cols()) != t.cols() {
            return Err(Error::ShapeMismatch {
                op: "stack",
                lhs: vec![cols.unwrap_or(0)],
                rhs: t.shape().to_vec(),
            });
        }
        rows += t.rows();
        data.extend_from_slice(t.data());
    }
    Tensor::new([rows, cols.unwrap_or(0)], data)
}

/// Consecutive pairs `(z_t, z_{t+1})` across trajectories, as two stacked tensors.
pub(crate) fn snapshot_pairs(trajs: &[Tensor]) -> Result<(Tensor, Tensor)> {
    let heads: Vec<Tensor> = trajs
        .iter()
        .filter(|t| t.rows() > 1)
        .map(|t| t.select_rows(&(0..t.rows() - 1).collect::<Vec<_>>()))
        .collect();
    let tails: Vec<Tensor> = trajs
        .iter()
        .filter(|t| t.rows() > 1)
        .map(|t| t.select_rows(&(1..t.rows()).collect::<Vec<_>>()))
        .collect();
    if heads.is_empty() {
        return Err(Error::InvalidArgument("no consecutive snapshot pairs".into()));
    }
    Ok((stack(heads.iter())?, stack(tails.iter())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridsim::FaultEvent;

    fn traj(id: &str, rows: usize, fault: Option<FaultEvent>) -> Trajectory {
        let data = (0..rows * 2).map(|i| i as f64).collect();
        Trajectory {
            id: id.into(),
            dt: 0.1,
            states: Tensor::new([rows, 2], data).unwrap(),
            fault,
        }
    }

    fn prep(delay: usize, subsample: usize, crop: bool) -> Preparation {
        Preparation {
            delay,
            subsample,
            crop_to_post_fault: crop,
        }
    }

    #[test]
    fn crop_subsample_and_embed() {
        // Fault ends at t = 0.35, first kept row is k = 3 (t = 0.4).
        let f = FaultEvent {
            bus: 0,
            t_start: 0.05,
            duration: 0.3,
            magnitude: -0.3,
        };
        let tr = traj("a", 10, Some(f));
        let id = NormStats::identity(2);
        let d = ExperimentData::new(std::slice::from_ref(&tr), &[], Some(id.clone()), prep(2, 2, true)).unwrap();
        let p = &d.train[0];
        assert_eq!(p.raw.rows(), 4);
        assert_eq!(p.raw.row_slice(0), tr.states.row_slice(3));
        assert_eq!(p.raw.row_slice(1), tr.states.row_slice(5));
        assert!((p.times[0] - 0.4).abs() < 1e-12);
        assert_eq!(p.embedded.shape(), &[3, 4]);
        assert_eq!(p.embedded.row_slice(0), &[10.0, 11.0, 6.0, 7.0]);
        assert_eq!(p.target(2).row_slice(0), tr.states.row_slice(5));
        assert_eq!(p.target_times(2).len(), 3);

        let full = ExperimentData::new(&[tr], &[], Some(id), prep(1, 1, false)).unwrap();
        assert_eq!(full.train[0].raw.rows(), 10);
        assert_eq!(full.embed_dim(), 2);
    }

    #[test]
    fn default_norm_uses_prepared_train_only() {
        let a = traj("a", 6, None);
        let mut b = traj("b", 6, None);
        b.states = b.states.map(|v| v * 100.0);
        let d = ExperimentData::new(std::slice::from_ref(&a), &[b], None, prep(1, 1, true)).unwrap();
        let expect = NormStats::from_trajectories(&[a]).unwrap();
        assert_eq!(d.norm, expect);
    }

    #[test]
    fn rejects_short_or_mismatched_trajectories() {
        let short = traj("s", 2, None);
        assert!(ExperimentData::new(&[short], &[], None, prep(3, 1, true)).is_err());
        let mut odd = traj("o", 5, None);
        odd.states = Tensor::zeros([5, 3]);
        assert!(ExperimentData::new(&[traj("a", 5, None)], &[odd], None, prep(1, 1, true)).is_err());
        assert!(ExperimentData::new(&[], &[], None, prep(1, 1, true)).is_err());
    }

    #[test]
    fn pairs_skip_single_row_trajectories() {
        let a = Tensor::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let b = Tensor::from_rows(&[[9.0]]).unwrap();
        let (x, y) = snapshot_pairs(&[a, b.clone()]).unwrap();
        assert_eq!(x.data(), &[1.0, 2.0]);
        assert_eq!(y.data(), &[2.0, 3.0]);
        assert!(snapshot_pairs(&[b]).is_err());
    }
}
