use rand::seq::SliceRandom;

use crate::error::Result;
use crate::numcore::{Backend, SeededRng};

/// Fixed coordinate shuffle, `y[j] = x[perm[j]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationLayer {
    pub perm: Vec<usize>,
    pub inverse: Vec<usize>,
}

impl PermutationLayer {
    pub fn from_perm(perm: Vec<usize>) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (j, &p) in perm.iter().enumerate() {
            inverse[p] = j;
        }
        Self { perm, inverse }
    }

    pub fn random(dim: usize, rng: &mut SeededRng) -> Self {
        let mut perm: Vec<usize> = (0..dim).collect();
        perm.shuffle(rng);
        Self::from_perm(perm)
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: &B::V) -> Result<B::V> {
        b.select_cols(x, &self.perm)
    }

    pub fn inverse<B: Backend>(&self, b: &mut B, y: &B::V) -> Result<B::V> {
        b.select_cols(y, &self.inverse)
    }
}
