use super::backend::Backend;
use super::op::Op;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Origin {
    Constant,
    Input,
    Param,
    Op { op: Op, inputs: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    origin: Origin,
    requires_grad: bool,
}

/// Dynamic reverse-mode tape, rebuilt for every training step.
///
/// Nodes are appended in evaluation order, so the node list is already
/// topologically sorted and backward is a single reverse sweep.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
}

/// Gradients from one backward pass.
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient with respect to a recorded value (zeros if unreachable).
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> &[(ParamId, Tensor)] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    fn push(&mut self, value: Tensor, origin: Origin, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            origin,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is wanted (e.g. network inputs in gradient checks).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Origin::Input, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(root.value.shape().to_vec(), vec![1.0])?);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Origin::Op { op, inputs } = &node.origin else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let vals: Vec<&Tensor> = inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let needs: Vec<bool> = inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
            let input_grads = op.backward(&vals, &node.value, &g, &needs)?;
            grads[i] = Some(g);
            for (&j, ig) in inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[j].requires_grad {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        let params = self
            .param_nodes
            .iter()
            .enumerate()
            .filter_map(|(p, n)| {
                let n = (*n)?;
                let g = grads[n].clone()?;
                Some((ParamId(p), g))
            })
            .collect();
        Ok(Gradients { by_node: grads, params })
    }
}

impl Backend for Tape<'_> {
    type V = Var;

    fn store(&self) -> &ParamStore {
        self.store
    }

    fn is_recording(&self) -> bool {
        true
    }

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Origin::Constant, false)
    }

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(n) = self.param_nodes[id.index()] {
            return Var(n);
        }
        let entry = self.store.entry(id);
        let v = self.push(entry.value.clone(), Origin::Param, entry.trainable);
        self.param_nodes[id.index()] = Some(v.0);
        v
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }

    fn apply(&mut self, op: Op, inputs: &[&Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = op.forward(&vals)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let inputs = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(out, Origin::Op { op, inputs }, requires_grad))
    }
}
