//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle to a node in a computation
//! graph. Operations build the graph forward; [`Tensor::backward`] replays
//! it in reverse and accumulates gradients on every `requires_grad` leaf.
//!
//! The engine is deliberately small: rank ≤ 2 data, single-threaded graphs,
//! no broadcasting beyond what the model layers need. All arithmetic is
//! deterministic — identical inputs produce bit-identical outputs.

mod checkpoint;
mod ops;

pub use checkpoint::{load_archive, read_archive, write_archive, ArchiveEntry, ArchiveError, NamedTensors};
pub use ops::scaled_dot_attention;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::scalar::Scalar;

/// Error raised by tensor construction, ops or the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Two operands have incompatible shapes for the named op.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// The op requires a different rank or shape than it was given.
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        expected: String,
    },
    /// Axis out of range for the tensor's rank.
    BadAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    /// An index argument exceeds the dimension it addresses.
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    /// The op needs at least one input element/operand.
    EmptyInput { op: &'static str },
    /// A softmax lane had no finite entry (e.g. everything masked).
    DegenerateSoftmax { op: &'static str },
    /// Every key of some attention query row was masked out.
    AllKeysMasked { query: usize },
    /// `backward` called on a tensor that is not a scalar.
    NonScalarLoss { shape: Vec<usize> },
    /// `backward` called on a graph with no differentiable leaves.
    DetachedGraph,
    /// `backward` called twice on the same loss node.
    BackwardTwice,
    /// A node in the graph still carries a gradient from an earlier
    /// backward pass; call `zero_grad` on the leaves first.
    GradNotCleared,
    /// Value buffer length does not match the node's shape.
    DataLenMismatch { expected: usize, got: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            TensorError::BadShape { op, shape, expected } => {
                write!(f, "{op}: got shape {shape:?}, expected {expected}")
            }
            TensorError::BadAxis { op, axis, rank } => {
                write!(f, "{op}: axis {axis} out of range for rank {rank}")
            }
            TensorError::IndexOutOfRange { op, index, bound } => {
                write!(f, "{op}: index {index} out of range (bound {bound})")
            }
            TensorError::EmptyInput { op } => write!(f, "{op}: empty input"),
            TensorError::DegenerateSoftmax { op } => {
                write!(f, "{op}: a softmax lane has no finite entries")
            }
            TensorError::AllKeysMasked { query } => {
                write!(f, "attention: every key masked for query {query}")
            }
            TensorError::NonScalarLoss { shape } => {
                write!(f, "backward: loss must be a scalar, got shape {shape:?}")
            }
            TensorError::DetachedGraph => {
                write!(f, "backward: graph has no differentiable leaves")
            }
            TensorError::BackwardTwice => {
                write!(f, "backward: already called on this loss")
            }
            TensorError::GradNotCleared => {
                write!(f, "backward: stale gradients present; call zero_grad first")
            }
            TensorError::DataLenMismatch { expected, got } => {
                write!(f, "value buffer length {got} does not match shape ({expected})")
            }
        }
    }
}

impl std::error::Error for TensorError {}

/// Gradient function of one op: maps the upstream gradient to one gradient
/// buffer per parent, in parent order.
type BackwardFn<S> = Box<dyn Fn(&[S]) -> Vec<Vec<S>>>;

struct Node<S: Scalar> {
    values: RefCell<Vec<S>>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<S>>>,
    parents: Vec<Tensor<S>>,
    backward: Option<BackwardFn<S>>,
    backwarded: Cell<bool>,
}

/// Handle to a node of the computation graph. Clones share the node.
pub struct Tensor<S: Scalar> {
    inner: Rc<Node<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("values", &self.inner.values.borrow())
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    fn make(
        values: Vec<S>,
        shape: Vec<usize>,
        requires_grad: bool,
        parents: Vec<Tensor<S>>,
        backward: Option<BackwardFn<S>>,
    ) -> Result<Self, TensorError> {
        let expected = numel_of(&shape);
        if values.len() != expected {
            return Err(TensorError::DataLenMismatch { expected, got: values.len() });
        }
        Ok(Tensor {
            inner: Rc::new(Node {
                values: RefCell::new(values),
                shape,
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward,
                backwarded: Cell::new(false),
            }),
        })
    }

    /// A constant: no gradient is ever recorded for it.
    pub fn constant(values: Vec<S>, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::make(values, shape, false, Vec::new(), None)
    }

    /// A differentiable leaf; `backward` will populate its gradient.
    pub fn leaf(values: Vec<S>, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::make(values, shape, true, Vec::new(), None)
    }

    /// Scalar constant (shape `[]`).
    pub fn scalar(value: S) -> Self {
        Self::constant(vec![value], vec![]).expect("scalar shape")
    }

    /// Zero-filled constant.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel_of(&shape);
        Self::constant(vec![S::zero(); n], shape).expect("consistent shape")
    }

    /// Internal: result of an op. Degrades to a constant when no parent
    /// participates in the gradient tape.
    pub(crate) fn from_op(
        values: Vec<S>,
        shape: Vec<usize>,
        parents: Vec<Tensor<S>>,
        backward: BackwardFn<S>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        if requires_grad {
            Self::make(values, shape, true, parents, Some(backward)).expect("op output shape")
        } else {
            Self::make(values, shape, false, Vec::new(), None).expect("op output shape")
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.parents.is_empty()
    }

    /// Borrow of the raw value buffer (row-major).
    pub fn values(&self) -> Ref<'_, Vec<S>> {
        self.inner.values.borrow()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.inner.values.borrow().clone()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.values.borrow()[0]
    }

    /// Current gradient, if one has been accumulated.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.inner.grad.borrow().clone()
    }

    /// Drop any accumulated gradient.
    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Replace the value buffer in place (optimizer updates, perturbations).
    /// Only meaningful on leaves; the graph built from old values is stale
    /// afterwards.
    pub fn set_values(&self, values: Vec<S>) -> Result<(), TensorError> {
        let expected = self.numel();
        if values.len() != expected {
            return Err(TensorError::DataLenMismatch { expected, got: values.len() });
        }
        *self.inner.values.borrow_mut() = values;
        Ok(())
    }

    /// Copy of this tensor's values as a fresh constant, cut off from the
    /// graph. Used to cache frozen embeddings.
    pub fn detach(&self) -> Tensor<S> {
        Self::constant(self.to_vec(), self.inner.shape.clone()).expect("same shape")
    }

    fn accumulate_grad(&self, delta: &[S]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi = *gi + *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode differentiation from a scalar loss.
    ///
    /// Accumulates `d loss / d leaf` into every reachable `requires_grad`
    /// leaf. The graph may be backwarded once; leaves must not carry stale
    /// gradients from an earlier pass (zero them first).
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.inner.shape.clone() });
        }
        if !self.inner.requires_grad {
            return Err(TensorError::DetachedGraph);
        }
        if self.inner.backwarded.get() {
            return Err(TensorError::BackwardTwice);
        }

        // Post-order DFS: parents precede consumers in `topo`.
        let mut topo: Vec<Tensor<S>> = Vec::new();
        let mut visited: HashSet<*const Node<S>> = HashSet::new();
        let mut stack: Vec<(Tensor<S>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                topo.push(node);
                continue;
            }
            let key = Rc::as_ptr(&node.inner);
            if !visited.insert(key) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in &node.inner.parents {
                if !visited.contains(&Rc::as_ptr(&p.inner)) {
                    stack.push((p.clone(), false));
                }
            }
        }

        for node in &topo {
            if node.inner.requires_grad && node.inner.grad.borrow().is_some() {
                return Err(TensorError::GradNotCleared);
            }
        }

        *self.inner.grad.borrow_mut() = Some(vec![S::one()]);
        self.inner.backwarded.set(true);

        for node in topo.iter().rev() {
            let Some(backward) = node.inner.backward.as_ref() else {
                continue;
            };
            let upstream = match node.inner.grad.borrow().as_ref() {
                Some(g) => g.clone(),
                None => continue,
            };
            let parent_grads = backward(&upstream);
            debug_assert_eq!(parent_grads.len(), node.inner.parents.len());
            for (parent, delta) in node.inner.parents.iter().zip(parent_grads) {
                if parent.inner.requires_grad {
                    debug_assert_eq!(delta.len(), parent.numel());
                    parent.accumulate_grad(&delta);
                }
            }
        }
        Ok(())
    }
}

/// A named trainable tensor.
#[derive(Clone)]
pub struct Parameter<S: Scalar> {
    pub name: String,
    pub tensor: Tensor<S>,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(name: impl Into<String>, values: Vec<S>, shape: Vec<usize>) -> Result<Self, TensorError> {
        Ok(Parameter { name: name.into(), tensor: Tensor::leaf(values, shape)? })
    }
}

impl<S: Scalar> fmt::Debug for Parameter<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Parameter")
            .field("name", &self.name)
            .field("shape", &self.tensor.shape())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = Tensor<f64>;

    #[test]
    fn scalar_and_zeros_shapes() {
        let s = T::scalar(3.5);
        assert_eq!(s.shape(), &[] as &[usize]);
        assert_eq!(s.item(), 3.5);
        let z = T::zeros(vec![2, 3]);
        assert_eq!(z.numel(), 6);
        assert!(z.to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn data_len_must_match_shape() {
        let err = T::constant(vec![1.0, 2.0], vec![3]).unwrap_err();
        assert_eq!(err, TensorError::DataLenMismatch { expected: 3, got: 2 });
    }

    #[test]
    fn backward_sum_of_squares() {
        // loss = sum x_i^2, x = [1,2,3] -> grad [2,4,6]
        let x = T::leaf(vec![1.0, 2.0, 3.0], vec![3]).unwrap();
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_gets_no_grad() {
        let x = T::leaf(vec![2.0], vec![1]).unwrap();
        let c = T::constant(vec![5.0], vec![1]).unwrap();
        let loss = x.mul(&c).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0]);
        assert!(c.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = T::leaf(vec![1.0, 2.0], vec![2]).unwrap();
        let y = x.mul(&x).unwrap();
        match y.backward() {
            Err(TensorError::NonScalarLoss { shape }) => assert_eq!(shape, vec![2]),
            other => panic!("expected NonScalarLoss, got {other:?}"),
        }
    }

    #[test]
    fn backward_rejects_detached_graph() {
        let c = T::constant(vec![1.0], vec![]).unwrap();
        assert_eq!(c.backward(), Err(TensorError::DetachedGraph));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let x = T::leaf(vec![1.0], vec![1]).unwrap();
        let loss = x.sum_all();
        loss.backward().unwrap();
        assert_eq!(loss.backward(), Err(TensorError::BackwardTwice));
    }

    #[test]
    fn stale_grad_is_an_error_and_zero_grad_clears_it() {
        let x = T::leaf(vec![1.0], vec![1]).unwrap();
        x.sum_all().backward().unwrap();
        let second = x.scale(2.0).sum_all();
        assert_eq!(second.backward(), Err(TensorError::GradNotCleared));
        x.zero_grad();
        let third = x.scale(2.0).sum_all();
        third.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn grad_accumulates_across_shared_use() {
        // loss = x*x + 3x -> d/dx = 2x + 3
        let x = T::leaf(vec![4.0], vec![1]).unwrap();
        let loss = x.mul(&x).unwrap().add(&x.scale(3.0)).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![11.0]);
    }

    #[test]
    fn detach_cuts_the_graph() {
        let x = T::leaf(vec![2.0], vec![1]).unwrap();
        let d = x.scale(3.0).detach();
        assert!(!d.requires_grad());
        assert_eq!(d.to_vec(), vec![6.0]);
    }
}
