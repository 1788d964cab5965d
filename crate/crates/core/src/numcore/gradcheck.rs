//! Central-difference gradient estimates, used as the oracle for the tape.

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate of `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Central differences with respect to one parameter of a store.
pub fn finite_diff_param<F>(store: &mut ParamStore, id: ParamId, mut f: F, h: f64) -> Result<Tensor>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let n = store.get(id).numel();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let orig = store.get(id).data()[i];
        store.get_mut(id).data_mut()[i] = orig + h;
        let plus = f(store)?;
        store.get_mut(id).data_mut()[i] = orig - h;
        let minus = f(store)?;
        store.get_mut(id).data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(store.get(id).shape().to_vec(), out)
}

/// Relative error `|a - b| / max(|a|, |b|, floor)` maximised over elements.
pub fn max_rel_err(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
