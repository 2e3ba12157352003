//! Dense tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted node. Operations on tensors
//! that require gradients record their inputs and a backward closure; calling
//! [`Tensor::backward`] on a scalar replays the recorded graph in reverse
//! topological order and accumulates gradients into every leaf that requires
//! them. Tensors that do not require gradients never record a graph.

mod conv;
mod norm;
mod ops;
mod scalar;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

pub use conv::{conv1d, conv2d, Conv2dGeometry};
pub use norm::{batch_norm, BatchNormMode, BatchStats, BN_EPS, BN_MOMENTUM};
pub use ops::softmax_cross_entropy;
pub use scalar::Scalar;

use crate::error::{Error, Result};

/// Backward closure: maps the gradient of the output to one optional
/// gradient per parent (same order as the parents were recorded).
pub type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct GradFn<T: Scalar> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    grad_fn: Option<GradFn<T>>,
}

/// N-dimensional row-major array participating in reverse-mode differentiation.
pub struct Tensor<T: Scalar = f32>(Arc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish_non_exhaustive()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} holds {numel} values, got {len}"
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn from_node(node: Node<T>) -> Self {
        Tensor(Arc::new(node))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Leaf tensor, optionally tracked for gradients (a parameter).
    pub fn leaf(data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        check_shape(shape, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction".into()));
        }
        Ok(Self::from_node(Node {
            shape: shape.to_vec(),
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn: None,
        }))
    }

    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(vec![T::zero(); shape.iter().product()], shape)
    }

    pub fn scalar(v: T) -> Result<Self> {
        Self::new(vec![v], &[1])
    }

    /// Result of a differentiable operation.
    ///
    /// `backward` receives the gradient of the output and returns one entry
    /// per parent; entries for parents that do not require gradients are
    /// ignored. If no parent requires gradients the graph is not recorded.
    pub fn from_op(
        name: &str,
        data: Vec<T>,
        shape: &[usize],
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        check_shape(shape, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn { parents, backward });
        Ok(Self::from_node(Node {
            shape: shape.to_vec(),
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Same tensor detached from the graph.
    pub fn detach(&self) -> Self {
        Self::from_node(Node {
            shape: self.0.shape.clone(),
            data: self.0.data.clone(),
            requires_grad: false,
            grad: Mutex::new(None),
            grad_fn: None,
        })
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Every leaf reachable from `self` that requires gradients has
    /// `dself/dleaf` added to its gradient buffer.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward() needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Shape(
                "backward() on a tensor that is not connected to any parameter".into(),
            ));
        }
        self.backward_with(vec![T::one()])
    }

    fn backward_with(&self, seed: Vec<T>) -> Result<()> {
        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<T>> = HashMap::with_capacity(order.len());
        pending.insert(self.key(), seed);

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.key()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    if node.requires_grad() {
                        let mut slot = node.0.grad.lock().expect("grad lock poisoned");
                        match slot.as_mut() {
                            Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += *g),
                            None => *slot = Some(grad),
                        }
                    }
                }
                Some(gf) => {
                    let parent_grads = (gf.backward)(&grad);
                    debug_assert_eq!(parent_grads.len(), gf.parents.len());
                    for (parent, pg) in gf.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        if pg.len() != parent.numel() {
                            return Err(Error::Shape(format!(
                                "backward produced {} gradient values for a tensor of shape {:?}",
                                pg.len(),
                                parent.shape()
                            )));
                        }
                        if pg.iter().any(|v| !v.is_finite()) {
                            return Err(Error::NonFinite("backward pass".into()));
                        }
                        match pending.get_mut(&parent.key()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += *g),
                            None => {
                                pending.insert(parent.key(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over nodes that require gradients; each node appears once.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (node, children already expanded)
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(gf) = &node.0.grad_fn {
                for p in gf.parents.iter().filter(|p| p.requires_grad()) {
                    if !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests;
