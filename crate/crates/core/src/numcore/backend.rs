use std::rc::Rc;

use super::op::{Binary, GatherMap, Op, Unary};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

/// Execution context for network code.
///
/// Every network is written once against this trait and runs either under
/// [`Eval`] (plain values, nothing recorded) or under
/// [`Tape`](super::Tape) (recorded for reverse-mode differentiation).
pub trait Backend {
    type V: Clone;

    fn store(&self) -> &ParamStore;

    /// Whether operations are being recorded for differentiation.
    fn is_recording(&self) -> bool;

    fn constant(&mut self, t: Tensor) -> Self::V;

    fn param(&mut self, id: ParamId) -> Self::V;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;

    fn apply(&mut self, op: Op, inputs: &[&Self::V]) -> Result<Self::V>;

    fn unary(&mut self, u: Unary, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::Unary(u), &[a])
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::Binary(Binary::Add), &[a, b])
    }

    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::Binary(Binary::Sub), &[a, b])
    }

    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::Binary(Binary::Mul), &[a, b])
    }

    fn div(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::Binary(Binary::Div), &[a, b])
    }

    fn scale(&mut self, a: &Self::V, c: f64) -> Result<Self::V> {
        self.apply(Op::Scale(c), &[a])
    }

    fn exp(&mut self, a: &Self::V) -> Result<Self::V> {
        self.unary(Unary::Exp, a)
    }

    fn log1p(&mut self, a: &Self::V) -> Result<Self::V> {
        self.unary(Unary::Log1p, a)
    }

    fn tanh(&mut self, a: &Self::V) -> Result<Self::V> {
        self.unary(Unary::Tanh, a)
    }

    fn silu(&mut self, a: &Self::V) -> Result<Self::V> {
        self.unary(Unary::Silu, a)
    }

    fn atan(&mut self, a: &Self::V) -> Result<Self::V> {
        self.unary(Unary::Atan, a)
    }

    fn square(&mut self, a: &Self::V) -> Result<Self::V> {
        self.unary(Unary::Square, a)
    }

    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::MatMul, &[a, b])
    }

    fn transpose(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::Transpose, &[a])
    }

    fn sum(&mut self, a: &Self::V) -> Result<Self::V> {
        self.apply(Op::Sum, &[a])
    }

    fn gather(&mut self, a: &Self::V, map: Rc<GatherMap>) -> Result<Self::V> {
        self.apply(Op::Gather(map), &[a])
    }

    fn reshape(&mut self, a: &Self::V, shape: Vec<usize>) -> Result<Self::V> {
        self.apply(Op::Reshape(shape), &[a])
    }

    fn concat_cols(&mut self, parts: &[&Self::V]) -> Result<Self::V> {
        self.apply(Op::ConcatCols, parts)
    }

    fn concat_rows(&mut self, parts: &[&Self::V]) -> Result<Self::V> {
        self.apply(Op::ConcatRows, parts)
    }

    fn rows(&self, a: &Self::V) -> usize {
        self.value(a).rows()
    }

    fn cols(&self, a: &Self::V) -> usize {
        self.value(a).cols()
    }

    fn select_cols(&mut self, a: &Self::V, pick: &[usize]) -> Result<Self::V> {
        let (r, c) = (self.rows(a), self.cols(a));
        self.gather(a, Rc::new(GatherMap::cols(r, c, pick)))
    }

    fn select_rows(&mut self, a: &Self::V, pick: &[usize]) -> Result<Self::V> {
        let (r, c) = (self.rows(a), self.cols(a));
        self.gather(a, Rc::new(GatherMap::rows(r, c, pick)))
    }

    /// Adds a `1 × n` row to every row of an `m × n` matrix.
    fn add_row(&mut self, a: &Self::V, row: &Self::V) -> Result<Self::V> {
        let ones = self.constant(Tensor::ones([self.rows(a), 1]));
        let tiled = self.matmul(&ones, row)?;
        self.add(a, &tiled)
    }

    /// Multiplies every row of an `m × n` matrix elementwise by a `1 × n` row.
    fn mul_row(&mut self, a: &Self::V, row: &Self::V) -> Result<Self::V> {
        let ones = self.constant(Tensor::ones([self.rows(a), 1]));
        let tiled = self.matmul(&ones, row)?;
        self.mul(a, &tiled)
    }

    /// Mean of all elements.
    fn mean(&mut self, a: &Self::V) -> Result<Self::V> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(&s, 1.0 / n)
    }
}

/// Plain evaluation without recording.
pub struct Eval<'s> {
    store: &'s ParamStore,
    cache: Vec<Option<Rc<Tensor>>>,
}

impl<'s> Eval<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            cache: vec![None; store.len()],
        }
    }
}

impl Backend for Eval<'_> {
    type V = Rc<Tensor>;

    fn store(&self) -> &ParamStore {
        self.store
    }

    fn is_recording(&self) -> bool {
        false
    }

    fn constant(&mut self, t: Tensor) -> Self::V {
        Rc::new(t)
    }

    fn param(&mut self, id: ParamId) -> Self::V {
        self.cache[id.index()]
            .get_or_insert_with(|| Rc::new(self.store.get(id).clone()))
            .clone()
    }

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor {
        v
    }

    fn apply(&mut self, op: Op, inputs: &[&Self::V]) -> Result<Self::V> {
        let vals: Vec<&Tensor> = inputs.iter().map(|v| v.as_ref()).collect();
        Ok(Rc::new(op.forward(&vals)?))
    }
}
