//! Dense double-precision tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable value node. Operations build a dynamic graph:
//! each result keeps handles to its parents plus a closure that scatters the
//! incoming gradient back to them. [`Tensor::backward`] walks the graph in
//! reverse topological order from a scalar loss, accumulating gradients
//! additively across fan-out, and consumes the tape as it goes so buffers are
//! released eagerly.
//!
//! Layout convention for images is `[batch, channels, height, width]`.

mod conv;
mod dct;
mod ops;
mod pool;

pub use conv::{conv2d, ConvSpec, Padding};
pub use dct::dct2d;
pub use ops::*;
pub use pool::{global_pool, local_pool, GlobalPoolKind, LocalPoolKind};

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};

type BackFn = Box<dyn Fn(&[f64])>;

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: RefCell<Option<BackFn>>,
}

/// Handle to a value node; cloning is cheap and shares the node.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Leaf node holding `data` with the given shape.
    pub fn from_vec(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::dimension(format!(
                "data length {} does not match shape {:?} (product {})",
                data.len(),
                shape,
                numel(shape)
            )));
        }
        Ok(Tensor {
            inner: Rc::new(Inner {
                shape: shape.to_vec(),
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: RefCell::new(None),
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(vec![0.0; numel(shape)], shape, false).unwrap()
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::from_vec(vec![1.0; numel(shape)], shape, false).unwrap()
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::from_vec(vec![value; numel(shape)], shape, false).unwrap()
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_vec(vec![value], &[1], false).unwrap()
    }

    /// Internal: result node produced by an operation.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: Option<BackFn>,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = backward.is_some();
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents: if requires_grad { parents } else { Vec::new() },
                backward: RefCell::new(backward),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "item() requires a scalar tensor, got shape {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data[0])
    }

    /// Accumulated gradient, if `backward` has reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Populates `grad` on every reachable node that requires gradients and
    /// consumes the tape: a second sweep over the same graph is an error.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward() requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.inner.requires_grad {
            // A loss detached from all parameters: nothing to do.
            return Ok(());
        }
        if !self.inner.parents.is_empty() && self.inner.backward.borrow().is_none() {
            return Err(Error::contract(
                "backward() called on a consumed tape; rebuild the graph",
            ));
        }

        // Iterative post-order DFS: children appear after all their parents
        // have been visited, so reversing gives a valid reverse-topological
        // order for the sweep.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.ptr_id());
        while let Some((node, child_idx)) = stack.pop() {
            if child_idx < node.inner.parents.len() {
                let parent = node.inner.parents[child_idx].clone();
                stack.push((node, child_idx + 1));
                if parent.inner.requires_grad && seen.insert(parent.ptr_id()) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }

        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            let back = node.inner.backward.borrow_mut().take();
            if let Some(back) = back {
                let g = node
                    .inner
                    .grad
                    .borrow()
                    .clone()
                    .unwrap_or_else(|| vec![0.0; node.numel()]);
                back(&g);
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

/// True when any operand wants gradients; ops skip tape recording otherwise.
pub(crate) fn any_requires_grad(ts: &[&Tensor]) -> bool {
    ts.iter().any(|t| t.requires_grad())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_shape_mismatch_is_dimension_error() {
        let e = Tensor::from_vec(vec![1.0, 2.0], &[3], false).unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::Dimension);
    }

    #[test]
    fn backward_requires_scalar() {
        let x = Tensor::from_vec(vec![1.0, 2.0], &[2], true).unwrap();
        let y = add(&x, &x).unwrap();
        let e = y.backward().unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::Contract);
    }

    #[test]
    fn sum_backward_is_all_ones() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0], &[3], true).unwrap();
        let loss = sum_all(&x);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_backward_is_two_x() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0], &[3], true).unwrap();
        let loss = sum_all(&mul(&x, &x).unwrap());
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn fanout_gradients_accumulate() {
        // loss = sum(x + x) => grad = 2 per element.
        let x = Tensor::from_vec(vec![1.0, 2.0], &[2], true).unwrap();
        let loss = sum_all(&add(&x, &x).unwrap());
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn tape_is_consumed_after_backward() {
        let x = Tensor::from_vec(vec![1.0, 2.0], &[2], true).unwrap();
        let loss = sum_all(&x);
        loss.backward().unwrap();
        let e = loss.backward().unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::Contract);
    }

    #[test]
    fn no_grad_path_records_nothing() {
        let x = Tensor::from_vec(vec![1.0, 2.0], &[2], false).unwrap();
        let y = add(&x, &x).unwrap();
        assert!(!y.requires_grad());
    }
}
