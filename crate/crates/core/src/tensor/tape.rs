//! Wengert-list reverse-mode differentiation.
//!
//! Every differentiable op pushes one node holding its value and, when any
//! input needs a gradient, a closure mapping the output cotangent to one
//! cotangent per input. Complex nodes carry cotangents in the
//! `dL/dRe + i·dL/dIm` convention, which makes the vector-Jacobian product of
//! a complex-linear map its conjugate transpose.

use std::cell::RefCell;
use std::fmt;

use super::Tensor;
use crate::error::{Error, Result};

pub(crate) type BackwardFn = Box<dyn FnOnce(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    inputs: Vec<usize>,
    requires_grad: bool,
    is_leaf: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
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

    /// A constant: no gradient will be produced for it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    /// A leaf that receives a gradient on [`Tape::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            inputs: Vec::new(),
            requires_grad,
            is_leaf: true,
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records an op result. `make_backward` is only invoked when at least
    /// one input participates in differentiation.
    pub(crate) fn push<F>(&self, value: Tensor, inputs: &[Var<'_>], make_backward: F) -> Var<'_>
    where
        F: FnOnce() -> BackwardFn,
    {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = ids.iter().any(|&i| nodes[i].requires_grad);
        let backward = requires_grad.then(make_backward);
        nodes.push(Node {
            value,
            inputs: ids,
            requires_grad,
            is_leaf: false,
            backward,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Back-propagates from a real scalar.
    ///
    /// Consumes the recorded backward closures, so it can run once per tape.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let root = loss.value();
        if root.numel() != 1 || root.is_complex() {
            return Err(Error::Usage(format!(
                "backward needs a real scalar loss, got {:?} {:?}",
                root.dtype(),
                root.shape()
            )));
        }
        let n = loss.id + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.id] = Some(Tensor::ones(root.shape()));

        for id in (0..n).rev() {
            let Some(g) = grads[id].clone() else { continue };
            let (backward, inputs) = {
                let mut nodes = self.nodes.borrow_mut();
                let node = &mut nodes[id];
                (node.backward.take(), node.inputs.clone())
            };
            let Some(backward) = backward else { continue };
            let input_grads = backward(&g);
            debug_assert_eq!(input_grads.len(), inputs.len());
            let nodes = self.nodes.borrow();
            for (&inp, ig) in inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !nodes[inp].requires_grad {
                    continue;
                }
                debug_assert_eq!(ig.shape(), nodes[inp].value.shape(), "cotangent shape");
                grads[inp] = Some(match grads[inp].take() {
                    Some(prev) => prev.accumulate(&ig),
                    None => ig,
                });
            }
            // Interior cotangents are no longer needed once propagated.
            if !nodes[id].is_leaf {
                grads[id] = None;
            }
        }

        let nodes = self.nodes.borrow();
        let mut out = vec![None; nodes.len()];
        for (id, node) in nodes.iter().enumerate() {
            if node.is_leaf && node.requires_grad {
                out[id] = Some(
                    grads
                        .get_mut(id)
                        .and_then(Option::take)
                        .unwrap_or_else(|| node.value.zeros_like()),
                );
            }
        }
        Ok(Gradients { grads: out })
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::param`]; `None` for constants
    /// and interior nodes.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn wrt(&self, var: Var<'_>) -> &Tensor {
        self.get(var).expect("no gradient recorded for this variable")
    }
}
