use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::RTensor;

use super::ops::Op;

/// Handle to a value recorded on a [`Tape`].
///
/// Handles are plain ids; the value lives on the tape and is reached with
/// [`Tape::value`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub(crate) id: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

pub(crate) struct Node {
    pub value: RTensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Append-only record of primitive operations.
///
/// Nodes are pushed in evaluation order, so the vector order is already a
/// topological order and the reverse pass is a single backwards scan.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

/// Gradients of one scalar output, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<RTensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&RTensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` if nothing flowed back.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> RTensor {
        self.get(v).cloned().unwrap_or_else(|| RTensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<RTensor> {
        self.grads.get_mut(v.id).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, value: RTensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: RTensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, RTensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.id].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    pub(crate) fn push(&self, value: RTensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { id: nodes.len() - 1 }
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.id].requires_grad)
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id].value;
        if out.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<RTensor>> = vec![None; nodes.len()];
        grads[output.id] = Some(RTensor::filled(out.shape(), 1.0));
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            node.op.backward(&nodes, &node.value, &g, &mut grads);
            grads[id] = Some(g);
        }
        for (id, g) in grads.iter_mut().enumerate() {
            if !nodes[id].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Build a graph on a fresh tape and return it with its output.
pub fn forward_eval<F>(build: F) -> Result<(Tape, Var)>
where
    F: FnOnce(&Tape) -> Result<Var>,
{
    let tape = Tape::new();
    let out = build(&tape)?;
    Ok((tape, out))
}

/// Accumulate `g` into the slot of node `id`.
pub(crate) fn accumulate(grads: &mut [Option<RTensor>], nodes: &[Node], id: usize, g: RTensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
