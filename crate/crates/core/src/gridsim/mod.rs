//! Swing-equation grid simulator used to produce frequency trajectories
//! after short power-injection faults.

mod dataset;
mod integrate;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{delay_embed, generate_dataset, read_csv, write_csv, Dataset, NormStats, Split};
pub use integrate::{integrate, integrate_with, Trajectory};

use crate::error::{Error, Result};
use crate::numcore::seeded;

/// IEEE 14-bus branches, 1-based.
const IEEE14_EDGES: [(usize, usize); 20] = [
    (1, 2),
    (1, 5),
    (2, 3),
    (2, 4),
    (2, 5),
    (3, 4),
    (4, 5),
    (4, 7),
    (4, 9),
    (5, 6),
    (6, 11),
    (6, 12),
    (6, 13),
    (7, 8),
    (7, 9),
    (9, 10),
    (9, 14),
    (10, 11),
    (12, 13),
    (13, 14),
];

pub const DEFAULT_DT: f64 = 0.005;
pub const DEFAULT_T_END: f64 = 10.0;
pub const DEFAULT_FAULT_START: f64 = 0.5;
pub const DEFAULT_FAULT_DURATION: f64 = 0.1;
pub const DEFAULT_FAULT_MAGNITUDE: f64 = -0.3;
pub const DEFAULT_SUSCEPTANCE: f64 = 5.0;
pub const INERTIA_RANGE: (f64, f64) = (2.0, 6.0);
/// Wide enough that every default fault decays below 10% of its peak
/// within 10 s.
pub const DAMPING_RANGE: (f64, f64) = (2.0, 5.0);

/// Network and machine parameters of a swing-equation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    pub inertia: Vec<f64>,
    pub damping: Vec<f64>,
    pub power: Vec<f64>,
    /// Dense symmetric `n × n` susceptance matrix with zero diagonal.
    pub susceptance: Vec<Vec<f64>>,
}

impl GridModel {
    pub fn new(inertia: Vec<f64>, damping: Vec<f64>, power: Vec<f64>, susceptance: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self {
            inertia,
            damping,
            power,
            susceptance,
        };
        m.validate()?;
        Ok(m)
    }

    /// IEEE 14-bus topology with uniform line susceptance and machine
    /// parameters drawn from `seed`.
    pub fn ieee14(seed: u64) -> Self {
        Self::from_edges(14, &IEEE14_EDGES, DEFAULT_SUSCEPTANCE, seed)
    }

    /// Random machines on a 1-based edge list; injections are balanced.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], b: f64, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut sus = vec![vec![0.0; n]; n];
        for &(i, j) in edges {
            sus[i - 1][j - 1] = b;
            sus[j - 1][i - 1] = b;
        }
        let inertia = (0..n)
            .map(|_| rng.random_range(INERTIA_RANGE.0..INERTIA_RANGE.1))
            .collect();
        let damping = (0..n)
            .map(|_| rng.random_range(DAMPING_RANGE.0..DAMPING_RANGE.1))
            .collect();
        let mut power: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mean = power.iter().sum::<f64>() / n as f64;
        power.iter_mut().for_each(|p| *p -= mean);
        Self {
            inertia,
            damping,
            power,
            susceptance: sus,
        }
    }

    pub fn n_bus(&self) -> usize {
        self.inertia.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_bus();
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if n == 0 {
            return bad("grid has no buses".into());
        }
        if self.damping.len() != n || self.power.len() != n || self.susceptance.len() != n {
            return bad("grid parameter lengths differ".into());
        }
        if self.inertia.iter().chain(&self.damping).any(|&v| !(v > 0.0)) {
            return bad("inertia and damping must be positive".into());
        }
        for (i, row) in self.susceptance.iter().enumerate() {
            if row.len() != n || row[i] != 0.0 {
                return bad("susceptance must be square with zero diagonal".into());
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v >= 0.0) || v != self.susceptance[j][i] {
                    return bad(format!("susceptance not symmetric non-negative at ({i}, {j})"));
                }
            }
        }
        let imbalance: f64 = self.power.iter().sum();
        if imbalance.abs() > 1e-9 {
            return bad(format!("injections must sum to zero, got {imbalance:e}"));
        }
        if !self.is_connected() {
            return bad("grid graph is not connected".into());
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.n_bus();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for (j, s) in seen.iter_mut().enumerate() {
                if self.susceptance[i][j] > 0.0 && !*s {
                    *s = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// `P_i - Σ_j B_ij sin(θ_i - θ_j)`.
    pub fn power_mismatch(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.n_bus();
        (0..n)
            .map(|i| {
                let flow: f64 = (0..n)
                    .map(|j| self.susceptance[i][j] * (theta[i] - theta[j]).sin())
                    .sum();
                self.power[i] - flow
            })
            .collect()
    }

    /// Swing energy `Σ ½Mω² − ΣPθ − ½ΣΣ B cos(θ_i − θ_j)`; non-increasing
    /// along unforced trajectories.
    pub fn energy(&self, theta: &[f64], omega: &[f64]) -> f64 {
        let n = self.n_bus();
        let mut e = 0.0;
        for i in 0..n {
            e += 0.5 * self.inertia[i] * omega[i] * omega[i] - self.power[i] * theta[i];
            for j in 0..n {
                e -= 0.5 * self.susceptance[i][j] * (theta[i] - theta[j]).cos();
            }
        }
        e
    }
}

/// Temporary injection change `magnitude` at `bus` over `[t_start, t_start + duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub bus: usize,
    pub t_start: f64,
    pub duration: f64,
    pub magnitude: f64,
}

impl FaultEvent {
    pub fn new(bus: usize) -> Self {
        Self {
            bus,
            t_start: DEFAULT_FAULT_START,
            duration: DEFAULT_FAULT_DURATION,
            magnitude: DEFAULT_FAULT_MAGNITUDE,
        }
    }

    pub fn validate(&self, n_bus: usize, t_end: f64) -> Result<()> {
        if self.bus >= n_bus {
            return Err(Error::InvalidConfig(format!(
                "fault bus {} outside 0..{n_bus}",
                self.bus
            )));
        }
        if !(self.t_start >= 0.0 && self.duration > 0.0 && self.t_start + self.duration < t_end) {
            return Err(Error::InvalidConfig(format!(
                "fault window [{}, {}) must lie inside (0, {t_end})",
                self.t_start,
                self.t_start + self.duration
            )));
        }
        Ok(())
    }

    pub fn active(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_start + self.duration
    }

    pub fn end(&self) -> f64 {
        self.t_start + self.duration
    }
}

/// `count` faults cycling through a seeded bus order. Each further pass over
/// the buses scales the magnitude by another 15%.
pub fn fault_schedule(n_bus: usize, count: usize, seed: u64) -> Vec<FaultEvent> {
    let mut order: Vec<usize> = (0..n_bus).collect();
    order.shuffle(&mut seeded(seed ^ 0xFA17));
    (0..count)
        .map(|i| {
            let round = (i / n_bus) as f64;
            FaultEvent {
                magnitude: DEFAULT_FAULT_MAGNITUDE * (1.0 + 0.15 * round),
                ..FaultEvent::new(order[i % n_bus])
            }
        })
        .collect()
}

/// Right-hand side of the swing equations at time `t`.
pub fn swing_rhs(
    model: &GridModel,
    theta: &[f64],
    omega: &[f64],
    t: f64,
    fault: Option<&FaultEvent>,
) -> (Vec<f64>, Vec<f64>) {
    let extra = fault.filter(|f| f.active(t));
    rhs_with(model, theta, omega, extra)
}

pub(crate) fn rhs_with(
    model: &GridModel,
    theta: &[f64],
    omega: &[f64],
    fault: Option<&FaultEvent>,
) -> (Vec<f64>, Vec<f64>) {
    let mut mismatch = model.power_mismatch(theta);
    if let Some(f) = fault {
        mismatch[f.bus] += f.magnitude;
    }
    let dw = (0..model.n_bus())
        .map(|i| (mismatch[i] - model.damping[i] * omega[i]) / model.inertia[i])
        .collect();
    (omega.to_vec(), dw)
}

/// Newton solve of `P_i = Σ_j B_ij sin(θ_i − θ_j)` with `θ_0 = 0`.
pub fn find_equilibrium(model: &GridModel) -> Result<Vec<f64>> {
    let n = model.n_bus();
    let mut theta = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..=50 {
        let f = model.power_mismatch(&theta);
        residual = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if residual < 1e-10 {
            return Ok(theta);
        }
        if n == 1 {
            break;
        }
        let mut jac = DMatrix::zeros(n - 1, n - 1);
        for i in 1..n {
            for k in 0..n {
                if k == i || model.susceptance[i][k] == 0.0 {
                    continue;
                }
                let c = model.susceptance[i][k] * (theta[i] - theta[k]).cos();
                jac[(i - 1, i - 1)] -= c;
                if k > 0 {
                    jac[(i - 1, k - 1)] += c;
                }
            }
        }
        let rhs = DVector::from_iterator(n - 1, f[1..].iter().map(|v| -v));
        let Some(step) = jac.lu().solve(&rhs) else {
            break;
        };
        for i in 1..n {
            theta[i] += step[i - 1];
        }
        if theta.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: 50,
        residual,
    })
}
