use super::{ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
pub(crate) trait Backward: Send {
    fn inputs(&self) -> Vec<Var>;
    /// Adds the contribution of `out_grad` to the gradients of the inputs.
    fn backward(&self, tape: &Tape, out_grad: &[f64], sink: &mut GradSink<'_>);
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    param: Option<ParamId>,
    op: Option<Box<dyn Backward>>,
}

/// Append-only record of a forward pass. Nodes are stored in creation order,
/// so inputs always precede their consumers.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, None)
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true, None)
    }

    /// Copies a parameter onto the tape. Its gradient can later be
    /// accumulated back with [`ParamStore::accumulate`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push_leaf(p.tensor.clone(), p.trainable, Some(id))
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, requires_grad, param, op: None });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: impl Backward + 'static) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op: Option<Box<dyn Backward>> = if requires_grad { Some(Box::new(op)) } else { None };
        self.nodes.push(Node { value, requires_grad, param: None, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn param_links(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (Var(i), p)))
    }

    /// Reverse sweep from a single-element `loss`. Each node is visited once;
    /// gradients from several consumers are summed before being propagated.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", loss_node.value.shape()),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !loss_node.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            let Some(g) = grads[i].take() else { continue };
            let mut sink = GradSink { grads: &mut grads[..i], tape: self };
            op.backward(self, &g, &mut sink);
        }
        Ok(Gradients { grads })
    }
}

/// Write access to input gradients during the reverse sweep.
pub(crate) struct GradSink<'a> {
    grads: &'a mut [Option<Vec<f64>>],
    tape: &'a Tape,
}

impl GradSink<'_> {
    /// Zero-initialised accumulator for `v`, or `None` when `v` needs no gradient.
    pub(crate) fn slot(&mut self, v: Var) -> Option<&mut [f64]> {
        let node = &self.tape.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }

    pub(crate) fn add(&mut self, v: Var, g: &[f64]) {
        if let Some(slot) = self.slot(v) {
            for (s, x) in slot.iter_mut().zip(g) {
                *s += x;
            }
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
