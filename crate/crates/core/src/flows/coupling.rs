use std::f64::consts::FRAC_2_PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Activation, Backend, Eval, Mlp, ParamStore, SeededRng, Tensor};

/// Disjoint index sets `(A, B)` covering `0..dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    /// `restore[i]` is the position of coordinate `i` in `a ++ b`.
    pub restore: Vec<usize>,
}

impl Partition {
    pub fn new(dim: usize, a: Vec<usize>, b: Vec<usize>) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::InvalidArgument("partition halves must both be nonempty".into()));
        }
        let mut restore = vec![usize::MAX; dim];
        for (pos, &i) in a.iter().chain(&b).enumerate() {
            if i >= dim || restore[i] != usize::MAX {
                return Err(Error::InvalidArgument(format!(
                    "index {i} repeated or out of range for dimension {dim}"
                )));
            }
            restore[i] = pos;
        }
        if restore.contains(&usize::MAX) {
            return Err(Error::InvalidArgument("partition does not cover all indices".into()));
        }
        Ok(Self { a, b, restore })
    }

    /// Contiguous halves: first `ceil(dim/2)` vs the rest, roles swapped when `swap`.
    pub fn halves(dim: usize, swap: bool) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "coupling partitions need dimension >= 2, got {dim}"
            )));
        }
        let split = dim.div_ceil(2);
        let first: Vec<usize> = (0..split).collect();
        let second: Vec<usize> = (split..dim).collect();
        if swap {
            Self::new(dim, second, first)
        } else {
            Self::new(dim, first, second)
        }
    }

    pub fn dim(&self) -> usize {
        self.restore.len()
    }

    /// Reassembles `[x_A | x_B]` into the original coordinate order.
    pub fn merge<B: Backend>(&self, b: &mut B, xa: &B::V, xb: &B::V) -> Result<B::V> {
        let cat = b.concat_cols(&[xa, xb])?;
        b.select_cols(&cat, &self.restore)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingMode {
    Additive,
    Affine,
}

/// `y_A = x_A`, `y_B = h(x_B; Q(x_A))`.
#[derive(Debug, Clone)]
pub struct CouplingLayer {
    pub mode: CouplingMode,
    pub partition: Partition,
    pub conditioner: Mlp,
    pub clamp: f64,
}

impl CouplingLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        mode: CouplingMode,
        partition: Partition,
        hidden: &[usize],
        activation: Activation,
        clamp: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let out = match mode {
            CouplingMode::Additive => partition.b.len(),
            CouplingMode::Affine => 2 * partition.b.len(),
        };
        let mut sizes = vec![partition.a.len()];
        sizes.extend_from_slice(hidden);
        sizes.push(out);
        let conditioner = Mlp::new(store, &format!("{name}.q"), &sizes, activation, rng, true);
        Self {
            mode,
            partition,
            conditioner,
            clamp,
        }
    }

    /// `clamp * (2/pi) * atan(s / clamp)`, strictly inside `(-clamp, clamp)`.
    pub fn soft_clamp<B: Backend>(&self, b: &mut B, s: &B::V) -> Result<B::V> {
        let scaled = b.scale(s, 1.0 / self.clamp)?;
        let at = b.atan(&scaled)?;
        b.scale(&at, self.clamp * FRAC_2_PI)
    }

    /// Conditioner outputs: translation only, or (clamped log-scale, translation).
    fn condition<B: Backend>(&self, b: &mut B, xa: &B::V) -> Result<(Option<B::V>, B::V)> {
        let q = self.conditioner.forward(b, xa)?;
        match self.mode {
            CouplingMode::Additive => Ok((None, q)),
            CouplingMode::Affine => {
                let nb = self.partition.b.len();
                let s_idx: Vec<usize> = (0..nb).collect();
                let t_idx: Vec<usize> = (nb..2 * nb).collect();
                let s = b.select_cols(&q, &s_idx)?;
                let t = b.select_cols(&q, &t_idx)?;
                Ok((Some(self.soft_clamp(b, &s)?), t))
            }
        }
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        let xa = b.select_cols(x, &self.partition.a)?;
        let xb = b.select_cols(x, &self.partition.b)?;
        let (s, t) = self.condition(b, &xa)?;
        let yb = match s {
            None => b.add(&xb, &t)?,
            Some(s) => {
                let e = b.exp(&s)?;
                let m = b.mul(&xb, &e)?;
                b.add(&m, &t)?
            }
        };
        self.partition.merge(b, &xa, &yb)
    }

    pub fn inverse<B: Backend>(&self, b: &mut B, y: &B::V) -> Result<B::V> {
        let ya = b.select_cols(y, &self.partition.a)?;
        let yb = b.select_cols(y, &self.partition.b)?;
        let (s, t) = self.condition(b, &ya)?;
        let shifted = b.sub(&yb, &t)?;
        let xb = match s {
            None => shifted,
            Some(s) => {
                let neg = b.scale(&s, -1.0)?;
                let e = b.exp(&neg)?;
                b.mul(&shifted, &e)?
            }
        };
        self.partition.merge(b, &ya, &xb)
    }

    /// Per-row log-determinant of the forward Jacobian (sum of clamped log-scales).
    pub fn log_det(&self, store: &ParamStore, x: &Tensor) -> Result<Vec<f64>> {
        if self.mode == CouplingMode::Additive {
            return Ok(vec![0.0; x.rows()]);
        }
        let mut b = Eval::new(store);
        let xv = b.constant(x.clone());
        let xa = b.select_cols(&xv, &self.partition.a)?;
        let (s, _) = self.condition(&mut b, &xa)?;
        let s = s.expect("affine coupling has a scale head");
        Ok((0..s.rows()).map(|r| s.row_slice(r).iter().sum()).collect())
    }

    pub fn randomize(&self, store: &mut ParamStore, rng: &mut SeededRng, scale: f64) {
        for id in self.conditioner.params() {
            let t = store.get(id).map(|_| rng.random_range(-scale..scale));
            store.set(id, t).expect("same shape");
        }
    }
}
