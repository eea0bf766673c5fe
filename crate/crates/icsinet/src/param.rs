//! Trainable parameters live outside any graph; each forward pass binds them
//! into the current tape as leaves and pulls gradients back out afterwards.

use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        let n = data.len();
        Parameter {
            name: name.into(),
            shape: shape.to_vec(),
            data,
            grad: vec![T::zero(); n],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Bind into `graph` as a requires-grad leaf.
    pub fn leaf(&self, graph: &Graph<T>) -> Tensor<T> {
        graph.tensor(&self.shape, self.data.clone(), true)
    }

    /// Add the leaf's accumulated gradient into this parameter's buffer.
    pub fn pull_grad(&mut self, leaf: &Tensor<T>) {
        if let Some(g) = leaf.grad() {
            for (a, b) in self.grad.iter_mut().zip(&g) {
                *a += *b;
            }
        }
    }
}
