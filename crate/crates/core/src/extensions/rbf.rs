use std::rc::Rc;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::numcore::{Backend, Eval, GatherMap, ParamId, ParamStore, SeededRng, Tensor};

/// Gaussian kernel features `exp(-gamma ‖x - c_j‖²)` against frozen centers.
#[derive(Debug, Clone)]
pub struct RbfExtension {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Buffer, `m × p`.
    pub centers: ParamId,
    /// Scalar `log(gamma)`; trainable.
    pub log_gamma: ParamId,
}

impl RbfExtension {
    pub fn new(store: &mut ParamStore, prefix: &str, p: usize, m: usize, rng: &mut SeededRng) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let data = (0..m * p).map(|_| StandardNormal.sample(rng)).collect();
        let centers = Tensor::new([m, p], data).expect("shape");
        let gamma = median_heuristic_gamma(&centers);
        Self {
            in_dim: p,
            out_dim: m,
            centers: store.add_buffer(format!("{prefix}.rbf.centers"), centers),
            log_gamma: store.add(format!("{prefix}.rbf.log_gamma"), Tensor::scalar(gamma.ln())),
        }
    }

    /// Picks `m` distinct training states as centers and resets the bandwidth.
    pub fn setup(&self, store: &mut ParamStore, states: &Tensor, rng: &mut SeededRng) -> Result<()> {
        let n = states.rows();
        if states.cols() != self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "rbf setup",
                lhs: vec![self.in_dim],
                rhs: vec![states.cols()],
            });
        }
        let idx: Vec<usize> = if n >= self.out_dim {
            sample(rng, n, self.out_dim).into_vec()
        } else if n > 0 {
            (0..self.out_dim).map(|i| i % n).collect()
        } else {
            return Err(Error::InvalidArgument("no states to draw RBF centers from".into()));
        };
        let centers = states.select_rows(&idx);
        let gamma = median_heuristic_gamma(&centers);
        store.set(self.centers, centers)?;
        store.set(self.log_gamma, Tensor::scalar(gamma.ln()))?;
        Ok(())
    }

    pub fn gamma(&self, store: &ParamStore) -> f64 {
        store.get(self.log_gamma).item().exp()
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        let (n, p) = (b.rows(x), b.cols(x));
        let m = self.out_dim;
        if p != self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "rbf extension",
                lhs: vec![self.in_dim],
                rhs: vec![p],
            });
        }
        // Repeat each state m times along the columns: N × (m·p).
        let mut src = Vec::with_capacity(n * m * p);
        for s in 0..n {
            for _ in 0..m {
                src.extend(s * p..(s + 1) * p);
            }
        }
        let tiled = b.gather(
            x,
            Rc::new(GatherMap {
                shape: vec![n, m * p],
                src,
                src_len: n * p,
            }),
        )?;
        let c = b.param(self.centers);
        let c_flat = b.reshape(&c, vec![1, m * p])?;
        let neg_c = b.scale(&c_flat, -1.0)?;
        let diff = b.add_row(&tiled, &neg_c)?;
        let sq = b.square(&diff)?;
        let sq = b.reshape(&sq, vec![n * m, p])?;
        let ones = b.constant(Tensor::ones([p, 1]));
        let d2 = b.matmul(&sq, &ones)?;
        let d2 = b.reshape(&d2, vec![n, m])?;
        let lg = b.param(self.log_gamma);
        let gamma = b.exp(&lg)?;
        let e = b.mul(&d2, &gamma)?;
        let e = b.scale(&e, -1.0)?;
        b.exp(&e)
    }
}

/// `1 / (2 median²)` over pairwise center distances; 1 if undefined.
pub fn median_heuristic_gamma(centers: &Tensor) -> f64 {
    let m = centers.rows();
    let mut d = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let s: f64 = centers
                .row_slice(i)
                .iter()
                .zip(centers.row_slice(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if med > 1e-12 {
        1.0 / (2.0 * med * med)
    } else {
        1.0
    }
}

/// Kernel features of one state.
pub fn rbf_features(x: &[f64], centers: &Tensor, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let mut store = ParamStore::new();
    let ext = RbfExtension {
        in_dim: x.len(),
        out_dim: centers.rows(),
        centers: store.add_buffer("centers", centers.clone()),
        log_gamma: store.add("log_gamma", Tensor::scalar(gamma.ln())),
    };
    let mut b = Eval::new(&store);
    let xv = b.constant(Tensor::row(x));
    Ok(ext.forward(&mut b, &xv)?.data().to_vec())
}
