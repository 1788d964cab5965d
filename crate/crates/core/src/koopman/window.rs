use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// `count` windows of `horizon + 1` consecutive states.
///
/// Rows are horizon-major: rows `k·count .. (k+1)·count` hold step `k` of
/// every window, so step blocks can be sliced without reordering.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub states: Tensor,
    pub count: usize,
    pub horizon: usize,
}

impl WindowBatch {
    /// `starts` are `(trajectory, first row)` pairs into `trajs` (each `T × p`).
    pub fn gather(trajs: &[Tensor], starts: &[(usize, usize)], horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        if starts.is_empty() {
            return Err(Error::InvalidArgument("empty window batch".into()));
        }
        let p = trajs[starts[0].0].cols();
        let n = starts.len();
        let mut data = Vec::with_capacity((horizon + 1) * n * p);
        for &(tr, t) in starts {
            let len = trajs.get(tr).map_or(0, Tensor::rows);
            if t + horizon >= len {
                return Err(Error::InvalidArgument(format!(
                    "horizon {horizon} from row {t} exceeds trajectory length {len}"
                )));
            }
        }
        for k in 0..=horizon {
            for &(tr, t) in starts {
                data.extend_from_slice(trajs[tr].row_slice(t + k));
            }
        }
        Ok(Self {
            states: Tensor::new([(horizon + 1) * n, p], data)?,
            count: n,
            horizon,
        })
    }

    /// Every valid window start across all trajectories.
    pub fn all_starts(trajs: &[Tensor], horizon: usize) -> Vec<(usize, usize)> {
        trajs
            .iter()
            .enumerate()
            .flat_map(|(i, tr)| (0..tr.rows().saturating_sub(horizon)).map(move |t| (i, t)))
            .collect()
    }

    /// State at step `k` of window `i`.
    pub fn state(&self, i: usize, k: usize) -> &[f64] {
        self.states.row_slice(k * self.count + i)
    }
}
