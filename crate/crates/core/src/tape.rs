//! Reverse-mode differentiation over a linear record of operations.
//!
//! Every differentiable op pushes one node holding its output value, the ids
//! of its inputs and a closure mapping the output gradient to one gradient per
//! input. Ids are handed out in push order, so the record is topologically
//! sorted by construction and [`Tape::backward`] is a single reverse sweep.

use std::cell::RefCell;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Tensor<T>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Single-threaded record of a computation. One tape per worker.
pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape that keeps values but drops backward rules; for inference.
    pub fn no_grad() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Registers an input or parameter tensor.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Vec::new(), None)
    }

    pub fn value(&self, var: Var<'_, T>) -> Tensor<T> {
        self.nodes.borrow()[var.id].value.clone()
    }

    /// Records the result of an op. `backward` receives the gradient of the
    /// output and returns one gradient per entry of `parents`, in order.
    pub(crate) fn record<'t, F>(
        &'t self,
        value: Tensor<T>,
        parents: &[Var<'t, T>],
        backward: F,
    ) -> Var<'t, T>
    where
        F: Fn(&Tensor<T>) -> Vec<Tensor<T>> + 'static,
    {
        for p in parents {
            assert!(
                std::ptr::eq(p.tape, self),
                "op mixes variables from different tapes"
            );
        }
        let ids = parents.iter().map(|p| p.id).collect();
        let backward = if self.grad_enabled {
            Some(Box::new(backward) as BackwardFn<T>)
        } else {
            None
        };
        self.push(value, ids, backward)
    }

    fn push(
        &self,
        value: Tensor<T>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            parents,
            backward,
        });
        Var { tape: self, id }
    }

    /// Gradients of the scalar `loss` with respect to every recorded tensor.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::UnknownNode(loss.id));
        }
        let nodes = self.nodes.borrow();
        let root = nodes.get(loss.id).ok_or(Error::UnknownNode(loss.id))?;
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !self.grad_enabled {
            return Err(Error::Contract(
                "backward on a tape recorded without gradients".into(),
            ));
        }

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), T::one())?);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(rule) = node.backward.as_ref() else {
                continue;
            };
            let Some(upstream) = grads[id].as_ref() else {
                continue;
            };
            let parent_grads = rule(upstream);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&pid, g) in node.parents.iter().zip(parent_grads) {
                debug_assert_eq!(g.shape(), nodes[pid].value.shape());
                grads[pid] = Some(match grads[pid].take() {
                    None => g,
                    Some(mut acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + *b;
                        }
                        acc
                    }
                });
            }
        }
        Ok(Gradients { grads })
    }
}

/// Handle to a tensor recorded on a [`Tape`].
pub struct Var<'t, T: Element> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Element> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Element> Copy for Var<'_, T> {}

impl<T: Element> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }
}

/// Gradient store produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// `None` when the loss does not depend on `var`.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()).expect("recorded shapes are valid"))
    }
}
