use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

fn to_na(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn from_na(m: &DMatrix<f64>) -> Tensor {
    let mut t = Tensor::zeros([m.nrows(), m.ncols()]);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            t.set(i, j, m[(i, j)]);
        }
    }
    t
}

/// Least-squares `K` with `Z1 ≈ Z0 K^T`, from the ridge normal equations
/// `(Z0^T Z0 + ridge I) K^T = Z0^T Z1`.
pub fn edmd_fit(z0: &Tensor, z1: &Tensor, ridge: f64) -> Result<Tensor> {
    if z0.shape() != z1.shape() {
        return Err(Error::ShapeMismatch {
            op: "edmd_fit",
            lhs: z0.shape().to_vec(),
            rhs: z1.shape().to_vec(),
        });
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    let (a, b) = (to_na(z0), to_na(z1));
    let q = a.ncols();
    let mut g = a.transpose() * &a;
    for i in 0..q {
        g[(i, i)] += ridge;
    }
    let rhs = a.transpose() * &b;
    if ridge == 0.0 {
        let eig = g.clone().symmetric_eigenvalues();
        let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        if !(max > 0.0) || min <= max * 1e-14 * q as f64 {
            return Err(Error::Singular(format!(
                "normal matrix is singular (eigenvalues in [{min:.3e}, {max:.3e}])"
            )));
        }
    }
    let kt = g
        .cholesky()
        .ok_or_else(|| Error::Singular("normal matrix is not positive definite".into()))?
        .solve(&rhs);
    Ok(from_na(&kt.transpose()))
}

/// Mean squared one-step residual `‖Z1 - Z0 K^T‖²_F / N`.
pub fn edmd_residual(z0: &Tensor, z1: &Tensor, k: &Tensor) -> Result<f64> {
    let pred = z0.matmul(&k.transpose())?;
    let se: f64 = pred.data().iter().zip(z1.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(se / z0.rows() as f64)
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(k: &Tensor) -> f64 {
    to_na(k).complex_eigenvalues().iter().fold(0.0, |m, c| m.max(c.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_least_squares() {
        let k = edmd_fit(&Tensor::row(&[2.0]), &Tensor::row(&[1.0]), 0.0).unwrap();
        assert!((k.item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_without_ridge() {
        let z = Tensor::from_rows(&[[1.0, 1.0], [2.0, 2.0]]).unwrap();
        assert!(matches!(edmd_fit(&z, &z, 0.0), Err(Error::Singular(_))));
        assert!(edmd_fit(&z, &z, 1e-6).is_ok());
    }

    #[test]
    fn recovers_generator_from_exact_data() {
        let a = Tensor::from_rows(&[[0.9, 0.1], [0.0, 0.8]]).unwrap();
        let mut rows = vec![vec![1.0, -0.5]];
        let mut alt = vec![vec![-0.3, 1.2]];
        for _ in 0..10 {
            rows.push(a.matvec(rows.last().unwrap()).unwrap());
            alt.push(a.matvec(alt.last().unwrap()).unwrap());
        }
        let mut z0 = rows[..10].to_vec();
        z0.extend_from_slice(&alt[..10]);
        let mut z1 = rows[1..].to_vec();
        z1.extend_from_slice(&alt[1..]);
        let k = edmd_fit(&Tensor::from_rows(&z0).unwrap(), &Tensor::from_rows(&z1).unwrap(), 0.0).unwrap();
        let frob = k
            .data()
            .iter()
            .zip(a.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(frob < 1e-8, "{frob}");
    }

    #[test]
    fn constant_data_is_a_fixed_point() {
        let c = [1.5, -0.5];
        let z = Tensor::from_rows(&[c; 5]).unwrap();
        let k = edmd_fit(&z, &z, 1e-6).unwrap();
        let kc = k.matvec(&c).unwrap();
        assert!((kc[0] - c[0]).abs() < 1e-5 && (kc[1] - c[1]).abs() < 1e-5);
    }

    #[test]
    fn radius_of_rotation_and_diagonal() {
        let (c, s) = (0.6f64, 0.8f64);
        let r = Tensor::from_rows(&[[0.9 * c, -0.9 * s], [0.9 * s, 0.9 * c]]).unwrap();
        assert!((spectral_radius(&r) - 0.9).abs() < 1e-12);
        let d = Tensor::from_rows(&[[0.5, 0.0], [0.0, -1.2]]).unwrap();
        assert!((spectral_radius(&d) - 1.2).abs() < 1e-12);
    }
}
