//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape of recorded operations. [`Tensor`] is a cheap handle
//! (graph + node id). Backward walks the tape in exact reverse recording
//! order, which is always a valid topological order, and accumulates
//! gradients additively (repeated `backward` calls add, they do not
//! overwrite).

mod gradcheck;
mod ops;
#[cfg(test)]
mod unit_tests;

pub use ops::concat_channels;

pub use gradcheck::{finite_diff_grad, grad_check, max_rel_err};

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    BadAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
}

/// Gradient rule: maps the output gradient to one gradient buffer per parent,
/// in parent order. Closures capture `Rc` clones of whatever forward data
/// they need, so backward never re-enters the tape.
type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Vec<T>>>;

struct Node<T: Scalar> {
    data: Rc<Vec<T>>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

#[derive(Default)]
struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// A recording tape shared by all tensors created on it. Single-writer: one
/// thread records; parallelism lives inside individual ops.
pub struct Graph<T: Scalar> {
    inner: Rc<RefCell<Tape<T>>>,
}

impl<T: Scalar> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Graph {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(Tape { nodes: Vec::new() })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut tape = self.inner.borrow_mut();
        tape.nodes.push(node);
        tape.nodes.len() - 1
    }

    /// New leaf tensor holding `data`.
    pub fn tensor(&self, shape: &[usize], data: Vec<T>, requires_grad: bool) -> Tensor<T> {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "leaf data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        let id = self.push(Node {
            data: Rc::new(data),
            requires_grad,
            grad: None,
            parents: Vec::new(),
            backward: None,
        });
        Tensor {
            graph: self.clone(),
            id,
            shape: shape.to_vec(),
        }
    }

    pub fn zeros(&self, shape: &[usize], requires_grad: bool) -> Tensor<T> {
        let n = shape.iter().product();
        self.tensor(shape, vec![T::zero(); n], requires_grad)
    }

    pub fn scalar(&self, v: T) -> Tensor<T> {
        self.tensor(&[1], vec![v], false)
    }

    /// Record a non-leaf node. `requires_grad` is inherited from the parents;
    /// the backward rule is dropped if no parent needs gradients.
    pub(crate) fn record(
        &self,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: &[&Tensor<T>],
        backward: BackwardFn<T>,
    ) -> Tensor<T> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let id = self.push(Node {
            data: Rc::new(data),
            requires_grad,
            grad: None,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad { Some(backward) } else { None },
        });
        Tensor {
            graph: self.clone(),
            id,
            shape,
        }
    }
}

/// Handle to one node of a [`Graph`].
pub struct Tensor<T: Scalar> {
    graph: Graph<T>,
    id: usize,
    shape: Vec<usize>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            graph: self.graph.clone(),
            id: self.id,
            shape: self.shape.clone(),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    /// Shared view of the forward value.
    pub fn data(&self) -> Rc<Vec<T>> {
        Rc::clone(&self.graph.inner.borrow().nodes[self.id].data)
    }

    /// Owned copy of the forward value.
    pub fn to_vec(&self) -> Vec<T> {
        self.graph.inner.borrow().nodes[self.id].data.as_ref().clone()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.graph.inner.borrow().nodes[self.id].data[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.graph.inner.borrow().nodes[self.id].grad.clone()
    }

    pub fn zero_grad(&self) {
        self.graph.inner.borrow_mut().nodes[self.id].grad = None;
    }

    /// Reverse-mode sweep from this scalar root. Gradients accumulate into
    /// every `requires_grad` node reachable from the root; calling twice
    /// doubles leaf gradients.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarRoot {
                shape: self.shape.clone(),
            });
        }
        let mut tape = self.graph.inner.borrow_mut();
        if !tape.nodes[self.id].requires_grad {
            return Ok(());
        }
        // Per-sweep buffers: persistent grads from earlier sweeps are only
        // added to, never consumed as seeds.
        let mut sweep: Vec<Option<Vec<T>>> = (0..=self.id).map(|_| None).collect();
        sweep[self.id] = Some(vec![T::one()]);
        for id in (0..=self.id).rev() {
            let Some(out_grad) = sweep[id].take() else {
                continue;
            };
            if !tape.nodes[id].requires_grad {
                continue;
            }
            if let Some(back) = &tape.nodes[id].backward {
                let parent_grads = back(&out_grad);
                debug_assert_eq!(parent_grads.len(), tape.nodes[id].parents.len());
                let parents = tape.nodes[id].parents.clone();
                for (pid, pg) in parents.into_iter().zip(parent_grads) {
                    if !tape.nodes[pid].requires_grad {
                        continue;
                    }
                    match &mut sweep[pid] {
                        Some(buf) => {
                            for (a, b) in buf.iter_mut().zip(&pg) {
                                *a += *b;
                            }
                        }
                        slot => *slot = Some(pg),
                    }
                }
            } else {
                // Leaf: persist the accumulated gradient.
                let node = &mut tape.nodes[id];
                match &mut node.grad {
                    Some(buf) => {
                        for (a, b) in buf.iter_mut().zip(&out_grad) {
                            *a += *b;
                        }
                    }
                    slot => *slot = Some(out_grad),
                }
            }
        }
        Ok(())
    }
}
