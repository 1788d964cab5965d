use crate::error::{Error, Result};
use crate::flows::FlowStack;
use crate::numcore::{ParamStore, Tensor};

fn check_pairs(truth: &[Tensor], pred: &[Tensor]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::ShapeMismatch {
            op: "rrmse",
            lhs: vec![truth.len()],
            rhs: vec![pred.len()],
        });
    }
    for (t, p) in truth.iter().zip(pred) {
        if t.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                op: "rrmse",
                lhs: t.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    Ok(())
}

fn sums(t: &Tensor, p: &Tensor) -> (f64, f64) {
    t.data()
        .iter()
        .zip(p.data())
        .fold((0.0, 0.0), |(num, den), (a, b)| (num + (a - b) * (a - b), den + a * a))
}

/// Pooled relative RMSE in percent over every trajectory, step and bus.
pub fn rrmse(truth: &[Tensor], pred: &[Tensor]) -> Result<f64> {
    check_pairs(truth, pred)?;
    let (num, den) = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| sums(t, p))
        .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    if !(den > 0.0) {
        return Err(Error::Degenerate("ground truth is identically zero".into()));
    }
    Ok((num / den).sqrt() * 100.0)
}

/// [`rrmse`] restricted to each trajectory.
pub fn per_trajectory_rrmse(truth: &[Tensor], pred: &[Tensor]) -> Result<Vec<f64>> {
    check_pairs(truth, pred)?;
    truth
        .iter()
        .zip(pred)
        .map(|(t, p)| rrmse(std::slice::from_ref(t), std::slice::from_ref(p)))
        .collect()
}

/// `max_n ‖x_n − inverse(forward(x_n))‖∞`.
pub fn invertibility_error(flow: &FlowStack, store: &ParamStore, samples: &Tensor) -> Result<f64> {
    if samples.rows() == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let y = flow.forward_values(store, samples)?;
    let back = flow.inverse_values(store, &y)?;
    Ok(back.max_abs_diff(samples))
}
