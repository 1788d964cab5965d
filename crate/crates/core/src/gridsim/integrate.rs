use serde::{Deserialize, Serialize};

use super::{find_equilibrium, rhs_with, FaultEvent, GridModel};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Frequency deviations sampled after every integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub dt: f64,
    /// `T × n_bus`; row `k` is the state at `t = (k + 1)·dt`.
    pub states: Tensor,
    pub fault: Option<FaultEvent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct TrajectoryHeader {
    pub id: String,
    pub dt: f64,
    pub fault: Option<FaultEvent>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_bus(&self) -> usize {
        self.states.cols()
    }

    pub fn time(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.dt
    }

    /// First row at or after the end of the fault window (0 without fault).
    pub fn post_fault_start(&self) -> usize {
        match &self.fault {
            None => 0,
            Some(f) => {
                let k = (f.end() / self.dt - 1.0 - 1e-9).ceil().max(0.0) as usize;
                k.min(self.len())
            }
        }
    }
}

/// Classic RK4 from the pre-fault equilibrium, calling `observe(t, θ, ω)`
/// after every step.
///
/// The fault forcing is held constant over a step and decided at the step
/// midpoint, so fault edges that fall on the grid are resolved exactly.
pub fn integrate_with(
    model: &GridModel,
    fault: Option<&FaultEvent>,
    dt: f64,
    t_end: f64,
    mut observe: impl FnMut(f64, &[f64], &[f64]),
) -> Result<()> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::InvalidConfig(format!("dt must lie in (0, 0.01], got {dt}")));
    }
    if !(t_end > dt) {
        return Err(Error::InvalidConfig(format!("t_end must exceed dt, got {t_end}")));
    }
    model.validate()?;
    if let Some(f) = fault {
        f.validate(model.n_bus(), t_end)?;
    }
    let n = model.n_bus();
    let steps = (t_end / dt).round() as usize;
    let mut theta = find_equilibrium(model)?;
    let mut omega = vec![0.0; n];
    let axpy = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    for s in 0..steps {
        let t = s as f64 * dt;
        let forced = fault.filter(|f| f.active(t + 0.5 * dt));
        let (k1t, k1w) = rhs_with(model, &theta, &omega, forced);
        let (k2t, k2w) = rhs_with(
            model,
            &axpy(&theta, &k1t, 0.5 * dt),
            &axpy(&omega, &k1w, 0.5 * dt),
            forced,
        );
        let (k3t, k3w) = rhs_with(
            model,
            &axpy(&theta, &k2t, 0.5 * dt),
            &axpy(&omega, &k2w, 0.5 * dt),
            forced,
        );
        let (k4t, k4w) = rhs_with(model, &axpy(&theta, &k3t, dt), &axpy(&omega, &k3w, dt), forced);
        for i in 0..n {
            theta[i] += dt / 6.0 * (k1t[i] + 2.0 * k2t[i] + 2.0 * k3t[i] + k4t[i]);
            omega[i] += dt / 6.0 * (k1w[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i]);
        }
        let t_next = (s + 1) as f64 * dt;
        let peak = omega.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(peak <= 10.0) {
            return Err(Error::Blowup { t: t_next, value: peak });
        }
        observe(t_next, &theta, &omega);
    }
    Ok(())
}

pub fn integrate(model: &GridModel, fault: Option<&FaultEvent>, dt: f64, t_end: f64) -> Result<Trajectory> {
    let mut data = Vec::new();
    integrate_with(model, fault, dt, t_end, |_, _, w| data.extend_from_slice(w))?;
    let n = model.n_bus();
    Ok(Trajectory {
        id: String::new(),
        dt,
        states: Tensor::new([data.len() / n, n], data)?,
        fault: fault.copied(),
    })
}
