//! Dense f64 tensors and a dynamic reverse-mode tape.

mod backend;
pub mod gradcheck;
mod nn;
mod op;
mod params;
mod tape;
mod tensor;

pub use backend::{Backend, Eval};
pub use gradcheck::{finite_diff_grad, finite_diff_param, max_rel_err};
pub use nn::{seeded, Activation, Linear, Mlp, SeededRng};
pub use op::{Binary, GatherMap, Op, Unary};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
