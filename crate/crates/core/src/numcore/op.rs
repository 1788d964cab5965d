use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index map for [`Op::Gather`]: output element `i` reads input element
/// `src[i]`, or zero when `src[i] == GatherMap::ZERO`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatherMap {
    pub shape: Vec<usize>,
    pub src: Vec<usize>,
    pub src_len: usize,
}

impl GatherMap {
    pub const ZERO: usize = usize::MAX;

    /// Column selection from an `rows × cols` matrix.
    pub fn cols(rows: usize, cols: usize, pick: &[usize]) -> Self {
        let mut src = Vec::with_capacity(rows * pick.len());
        for r in 0..rows {
            src.extend(pick.iter().map(|&c| r * cols + c));
        }
        Self {
            shape: vec![rows, pick.len()],
            src,
            src_len: rows * cols,
        }
    }

    /// Row selection from an `rows × cols` matrix.
    pub fn rows(rows: usize, cols: usize, pick: &[usize]) -> Self {
        let mut src = Vec::with_capacity(pick.len() * cols);
        for &r in pick {
            src.extend(r * cols..(r + 1) * cols);
        }
        Self {
            shape: vec![pick.len(), cols],
            src,
            src_len: rows * cols,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Exp,
    Log1p,
    Tanh,
    Silu,
    Atan,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// Primitive operations understood by the tape.
#[derive(Debug, Clone)]
pub enum Op {
    Unary(Unary),
    Binary(Binary),
    /// Multiplication by a constant.
    Scale(f64),
    MatMul,
    Transpose,
    /// Sum of all elements to a scalar.
    Sum,
    Gather(Rc<GatherMap>),
    Reshape(Vec<usize>),
    ConcatCols,
    ConcatRows,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Unary {
    pub fn name(self) -> &'static str {
        match self {
            Unary::Exp => "exp",
            Unary::Log1p => "log1p",
            Unary::Tanh => "tanh",
            Unary::Silu => "silu",
            Unary::Atan => "atan",
            Unary::Square => "square",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Exp => x.exp(),
            Unary::Log1p => x.ln_1p(),
            Unary::Tanh => x.tanh(),
            Unary::Silu => x * sigmoid(x),
            Unary::Atan => x.atan(),
            Unary::Square => x * x,
        }
    }

    /// Derivative given input `x` and output `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Exp => y,
            Unary::Log1p => 1.0 / (1.0 + x),
            Unary::Tanh => 1.0 - y * y,
            Unary::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Atan => 1.0 / (1.0 + x * x),
            Unary::Square => 2.0 * x,
        }
    }
}

impl Binary {
    pub fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

/// Reduces a gradient to the shape of a (possibly scalar-broadcast) input.
fn unbroadcast(input: &Tensor, grad: Tensor) -> Tensor {
    if input.numel() == grad.numel() {
        grad.reshape(input.shape().to_vec())
            .expect("gradient numel matches input")
    } else {
        Tensor::new(input.shape().to_vec(), vec![grad.sum()]).expect("scalar input")
    }
}

fn at(t: &Tensor, i: usize) -> f64 {
    if t.is_scalar() {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Unary(u) => u.name(),
            Op::Binary(b) => b.name(),
            Op::Scale(_) => "scale",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Sum => "sum",
            Op::Gather(_) => "gather",
            Op::Reshape(_) => "reshape",
            Op::ConcatCols => "concat_cols",
            Op::ConcatRows => "concat_rows",
        }
    }

    fn arity_ok(&self, n: usize) -> bool {
        match self {
            Op::Binary(_) | Op::MatMul => n == 2,
            Op::ConcatCols | Op::ConcatRows => n >= 1,
            _ => n == 1,
        }
    }

    /// Computes the op's output; rejects shape errors and non-finite results.
    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        if !self.arity_ok(inputs.len()) {
            return Err(Error::InvalidArgument(format!(
                "{} received {} inputs",
                self.name(),
                inputs.len()
            )));
        }
        let out = match self {
            Op::Unary(u) => inputs[0].map(|x| u.eval(x)),
            Op::Binary(b) => {
                let (x, y) = (inputs[0], inputs[1]);
                let shape = broadcast_shape(b.name(), x, y)?;
                let n: usize = shape.iter().product();
                let data = (0..n).map(|i| b.eval(at(x, i), at(y, i))).collect();
                Tensor::new(shape, data)?
            }
            Op::Scale(c) => inputs[0].map(|x| c * x),
            Op::MatMul => inputs[0].matmul(inputs[1])?,
            Op::Transpose => {
                if inputs[0].shape().len() != 2 {
                    return Err(Error::ShapeMismatch {
                        op: "transpose",
                        lhs: inputs[0].shape().to_vec(),
                        rhs: vec![],
                    });
                }
                inputs[0].transpose()
            }
            Op::Sum => Tensor::scalar(inputs[0].sum()),
            Op::Gather(map) => {
                let x = inputs[0];
                if x.numel() != map.src_len {
                    return Err(Error::ShapeMismatch {
                        op: "gather",
                        lhs: x.shape().to_vec(),
                        rhs: vec![map.src_len],
                    });
                }
                let d = x.data();
                let data = map
                    .src
                    .iter()
                    .map(|&s| if s == GatherMap::ZERO { 0.0 } else { d[s] })
                    .collect();
                Tensor::new(map.shape.clone(), data)?
            }
            Op::Reshape(shape) => inputs[0].clone().reshape(shape.clone())?,
            Op::ConcatCols => concat_cols(inputs)?,
            Op::ConcatRows => concat_rows(inputs)?,
        };
        if !out.is_finite() {
            return Err(Error::NonFinite(self.name()));
        }
        Ok(out)
    }

    /// Vector-Jacobian products for each input. `needs[i]` false skips input `i`.
    pub fn backward(
        &self,
        inputs: &[&Tensor],
        out: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let mut res: Vec<Option<Tensor>> = vec![None; inputs.len()];
        match self {
            Op::Unary(u) => {
                let x = inputs[0];
                let data = x
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(grad.data())
                    .map(|((&xi, &yi), &gi)| gi * u.deriv(xi, yi))
                    .collect();
                res[0] = Some(Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::Binary(b) => {
                let (x, y) = (inputs[0], inputs[1]);
                let n = grad.numel();
                let g = grad.data();
                if needs[0] {
                    let data: Vec<f64> = match b {
                        Binary::Add | Binary::Sub => g.to_vec(),
                        Binary::Mul => (0..n).map(|i| g[i] * at(y, i)).collect(),
                        Binary::Div => (0..n).map(|i| g[i] / at(y, i)).collect(),
                    };
                    res[0] = Some(unbroadcast(x, Tensor::new(grad.shape().to_vec(), data)?));
                }
                if needs[1] {
                    let data: Vec<f64> = match b {
                        Binary::Add => g.to_vec(),
                        Binary::Sub => g.iter().map(|v| -v).collect(),
                        Binary::Mul => (0..n).map(|i| g[i] * at(x, i)).collect(),
                        Binary::Div => (0..n)
                            .map(|i| {
                                let yi = at(y, i);
                                -g[i] * at(x, i) / (yi * yi)
                            })
                            .collect(),
                    };
                    res[1] = Some(unbroadcast(y, Tensor::new(grad.shape().to_vec(), data)?));
                }
            }
            Op::Scale(c) => res[0] = Some(grad.map(|g| c * g)),
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                if needs[0] {
                    res[0] = Some(grad.matmul(&b.transpose())?);
                }
                if needs[1] {
                    res[1] = Some(a.transpose().matmul(grad)?);
                }
            }
            Op::Transpose => res[0] = Some(grad.transpose()),
            Op::Sum => res[0] = Some(Tensor::full(inputs[0].shape().to_vec(), grad.item())),
            Op::Gather(map) => {
                let mut acc = vec![0.0; map.src_len];
                for (&s, &g) in map.src.iter().zip(grad.data()) {
                    if s != GatherMap::ZERO {
                        acc[s] += g;
                    }
                }
                res[0] = Some(Tensor::new(inputs[0].shape().to_vec(), acc)?);
            }
            Op::Reshape(_) => res[0] = Some(grad.clone().reshape(inputs[0].shape().to_vec())?),
            Op::ConcatCols => {
                let rows = grad.rows();
                let total = grad.cols();
                let mut offset = 0;
                for (i, x) in inputs.iter().enumerate() {
                    let c = x.cols();
                    if needs[i] {
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(&grad.data()[r * total + offset..r * total + offset + c]);
                        }
                        res[i] = Some(Tensor::new(x.shape().to_vec(), data)?);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows => {
                let mut offset = 0;
                for (i, x) in inputs.iter().enumerate() {
                    let n = x.numel();
                    if needs[i] {
                        res[i] = Some(Tensor::new(
                            x.shape().to_vec(),
                            grad.data()[offset..offset + n].to_vec(),
                        )?);
                    }
                    offset += n;
                }
            }
        }
        Ok(res)
    }
}

fn concat_cols(inputs: &[&Tensor]) -> Result<Tensor> {
    let rows = inputs[0].rows();
    for x in inputs {
        if x.rows() != rows || x.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: inputs[0].shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
    }
    let total: usize = inputs.iter().map(|x| x.cols()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for x in inputs {
            data.extend_from_slice(x.row_slice(r));
        }
    }
    Tensor::new([rows, total], data)
}

fn concat_rows(inputs: &[&Tensor]) -> Result<Tensor> {
    let cols = inputs[0].cols();
    let mut rows = 0;
    for x in inputs {
        if x.cols() != cols || x.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                lhs: inputs[0].shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        rows += x.rows();
    }
    let mut data = Vec::with_capacity(rows * cols);
    for x in inputs {
        data.extend_from_slice(x.data());
    }
    Tensor::new([rows, cols], data)
}
