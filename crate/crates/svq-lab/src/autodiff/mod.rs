//! Reverse-mode automatic differentiation over a recording tape.
//!
//! Operations evaluate eagerly and append a node holding the result, the
//! parent indices and a backward closure. The backward pass walks nodes in
//! exact reverse recording order (which is a valid topological order) and
//! accumulates gradients additively across fan-out. A [`Var`] is a copyable
//! handle `(tape, node id)`; mixing handles from two tapes is a usage error.

mod gradcheck;
mod ops;
mod optim;

pub use gradcheck::grad_check;
pub use ops::concat_vars;
pub use optim::{adam_step, cosine_lr, sgd_step, AdamState};

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::Tensor;

type BackwardFn = Box<dyn Fn(&Tensor) -> Result<Vec<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Recording tape; owns all node values and, after [`Tape::backward`], all
/// gradients. Confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts a leaf that participates in gradients.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.insert(value, vec![], None, true)
    }

    /// Inserts a leaf treated as a constant (no gradient).
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.insert(value, vec![], None, false)
    }

    fn insert(
        &self,
        value: Tensor,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        leaf_requires: bool,
    ) -> Var<'_> {
        let requires_grad = if parents.is_empty() {
            leaf_requires
        } else {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records an operation node. `backward` maps the incoming gradient to
    /// one gradient per parent, in parent order.
    pub(crate) fn push_op(
        &self,
        value: Tensor,
        parents: Vec<usize>,
        backward: BackwardFn,
    ) -> Var<'_> {
        self.insert(value, parents, Some(backward), false)
    }

    /// Runs the backward pass from a scalar root, filling every reachable
    /// gradient slot. Prior gradients are discarded.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        if !std::ptr::eq(root.tape, self) {
            return Err(Error::usage("backward root belongs to a different tape"));
        }
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar root, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads = self.grads.borrow_mut();
        grads.clear();
        grads.resize(nodes.len(), None);
        grads[root.id] = Some(Tensor::full(nodes[root.id].value.shape(), 1.0));
        for id in (0..=root.id).rev() {
            if grads[id].is_none() {
                continue;
            }
            let Some(back) = nodes[id].backward.as_ref() else {
                continue;
            };
            let g = grads[id].take().expect("checked above");
            let parent_grads = back(&g)?;
            debug_assert_eq!(parent_grads.len(), nodes[id].parents.len());
            for (&pid, pg) in nodes[id].parents.iter().zip(parent_grads) {
                if !nodes[pid].requires_grad {
                    continue;
                }
                match &mut grads[pid] {
                    Some(existing) => *existing = existing.add(&pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[id] = Some(g);
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub(crate) fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrow of the node value (no copy).
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |nodes| &nodes[self.id].value)
    }

    pub fn value_clone(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self) -> Result<f64> {
        let v = self.value();
        if v.len() != 1 {
            return Err(Error::usage(format!(
                "scalar() on shape {:?}",
                v.shape()
            )));
        }
        Ok(v.data()[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Gradient recorded by the last backward pass, if any reached this node.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grads.borrow().get(self.id).cloned().flatten()
    }

    /// Gradient or zeros of the value's shape.
    pub fn grad_or_zero(&self) -> Tensor {
        self.grad()
            .unwrap_or_else(|| Tensor::zeros(&self.shape()))
    }

    pub(crate) fn check_same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::usage(
                "operation mixes variables from different tapes",
            ))
        }
    }
}
