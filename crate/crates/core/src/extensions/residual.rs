use crate::error::{Error, Result};
use crate::numcore::{Backend, Eval, Linear, ParamStore, SeededRng, Tensor};

/// Residual MLP: `h = W_in x`, `h <- h + W2 silu(W1 h)` per block, `y = W_out h`.
#[derive(Debug, Clone)]
pub struct ResidualExtension {
    pub in_dim: usize,
    pub out_dim: usize,
    pub input: Linear,
    pub blocks: Vec<(Linear, Linear)>,
    pub output: Linear,
}

impl ResidualExtension {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        p: usize,
        m: usize,
        width: usize,
        depth: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let input = Linear::new(store, &format!("{prefix}.res.in"), p, width, rng, false);
        let blocks = (0..depth)
            .map(|i| {
                (
                    Linear::new(store, &format!("{prefix}.res.{i}.w1"), width, width, rng, false),
                    Linear::new(store, &format!("{prefix}.res.{i}.w2"), width, width, rng, false),
                )
            })
            .collect();
        let output = Linear::new(store, &format!("{prefix}.res.out"), width, m, rng, false);
        Self {
            in_dim: p,
            out_dim: m,
            input,
            blocks,
            output,
        }
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        if b.cols(x) != self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "residual extension",
                lhs: vec![self.in_dim],
                rhs: vec![b.cols(x)],
            });
        }
        let mut h = self.input.forward(b, x)?;
        for (w1, w2) in &self.blocks {
            let u = w1.forward(b, &h)?;
            let u = b.silu(&u)?;
            let u = w2.forward(b, &u)?;
            h = b.add(&h, &u)?;
        }
        self.output.forward(b, &h)
    }
}

/// Features of one state.
pub fn multitimescale_features(x: &[f64], net: &ResidualExtension, store: &ParamStore) -> Result<Vec<f64>> {
    let mut b = Eval::new(store);
    let xv = b.constant(Tensor::row(x));
    Ok(net.forward(&mut b, &xv)?.data().to_vec())
}
