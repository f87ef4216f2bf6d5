//! Reverse-mode automatic differentiation.
//!
//! Every differentiable operation appends a node to a [`Tape`]. Nodes only
//! refer to earlier nodes, so walking the node list backwards visits the
//! graph in reverse execution order. Each tape supports exactly one call to
//! [`Tape::backward`]; the adjoint closures are consumed as they run.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{mismatch, Error, Result};
use crate::tensor::{Element, Tensor};

type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<T>)>;

struct Node<T> {
    shape: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

struct TapeInner<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Handle to an operation record. Cloning the handle shares the record.
pub struct Tape<T> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Rc::clone(&self.inner),
        }
    }
}

/// A value produced on a tape.
pub struct Var<T> {
    id: usize,
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    tape: Tape<T>,
}

impl<T> Clone for Var<T> {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            value: Rc::clone(&self.value),
            requires_grad: self.requires_grad,
            tape: self.tape.clone(),
        }
    }
}

impl<T: Element> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

/// Accumulates adjoints during a backward sweep.
pub struct GradSink<T> {
    grads: Vec<Option<Vec<T>>>,
    numel: Vec<usize>,
    requires: Vec<bool>,
}

impl<T: Element> GradSink<T> {
    /// Mutable adjoint buffer for node `id`, or `None` when the node does not
    /// need a gradient. Buffers start at zero; callers add into them.
    pub fn slot(&mut self, id: usize) -> Option<&mut [T]> {
        if !self.requires[id] {
            return None;
        }
        let n = self.numel[id];
        Some(self.grads[id].get_or_insert_with(|| vec![T::zero(); n]))
    }

    /// Adds `g` elementwise into the adjoint of node `id`.
    pub fn add(&mut self, id: usize, g: &[T]) {
        if let Some(slot) = self.slot(id) {
            for (s, &v) in slot.iter_mut().zip(g) {
                *s = *s + v;
            }
        }
    }

    pub fn wants(&self, id: usize) -> bool {
        self.requires[id]
    }
}

/// Gradients of the backward root with respect to tape leaves.
pub struct Gradients<T> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient for `var`, or `None` when the root does not depend on it.
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(&var.id)
    }

    /// Gradient for `var`, zero-filled when unreachable from the root.
    pub fn get_or_zero(&self, var: &Var<T>) -> Tensor<T> {
        self.grads
            .get(&var.id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                consumed: false,
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an input tensor.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<T> {
        self.leaf_rc(Rc::new(value), requires_grad)
    }

    pub fn leaf_rc(&self, value: Rc<Tensor<T>>, requires_grad: bool) -> Var<T> {
        self.push(value, requires_grad, None)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.leaf(value, false)
    }

    fn push(
        &self,
        value: Rc<Tensor<T>>,
        requires_grad: bool,
        backward: Option<BackwardFn<T>>,
    ) -> Var<T> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            shape: value.shape().to_vec(),
            requires_grad,
            backward,
        });
        Var {
            id,
            value,
            requires_grad,
            tape: self.clone(),
        }
    }

    /// Records the result of an operation on `parents`. The adjoint closure
    /// receives the output adjoint and scatters into the parents' slots; it
    /// is dropped when no parent requires a gradient.
    pub(crate) fn record<F>(&self, value: Tensor<T>, parents: &[&Var<T>], backward: F) -> Var<T>
    where
        F: Fn(&[T], &mut GradSink<T>) + 'static,
    {
        self.record_rc(Rc::new(value), parents, backward)
    }

    pub(crate) fn record_rc<F>(
        &self,
        value: Rc<Tensor<T>>,
        parents: &[&Var<T>],
        backward: F,
    ) -> Var<T>
    where
        F: Fn(&[T], &mut GradSink<T>) + 'static,
    {
        for p in parents {
            assert!(
                Rc::ptr_eq(&p.tape.inner, &self.inner),
                "operands recorded on different tapes"
            );
        }
        let requires = parents.iter().any(|p| p.requires_grad);
        let backward: Option<BackwardFn<T>> = if requires {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(value, requires, backward)
    }

    /// Backpropagates from a one-element root.
    pub fn backward(&self, root: &Var<T>) -> Result<Gradients<T>> {
        if root.value.numel() != 1 {
            return Err(Error::NonScalarRoot(root.shape().to_vec()));
        }
        self.backward_with_seed(root, &Tensor::ones(root.shape().to_vec()))
    }

    /// Backpropagates from `root` with an explicit output adjoint.
    pub fn backward_with_seed(&self, root: &Var<T>, seed: &Tensor<T>) -> Result<Gradients<T>> {
        if !Rc::ptr_eq(&root.tape.inner, &self.inner) {
            return Err(Error::Detached);
        }
        if seed.shape() != root.shape() {
            return Err(mismatch("backward seed", seed.shape(), root.shape()));
        }
        let (shapes, requires, leaves) = {
            let mut inner = self.inner.borrow_mut();
            if inner.consumed {
                return Err(Error::BackwardTwice);
            }
            if !inner.nodes[root.id].requires_grad {
                return Err(Error::Detached);
            }
            inner.consumed = true;
            let shapes: Vec<Vec<usize>> = inner.nodes.iter().map(|n| n.shape.clone()).collect();
            let requires: Vec<bool> = inner.nodes.iter().map(|n| n.requires_grad).collect();
            let leaves: Vec<bool> = inner
                .nodes
                .iter()
                .map(|n| n.requires_grad && n.backward.is_none())
                .collect();
            (shapes, requires, leaves)
        };

        let mut sink = GradSink {
            grads: vec![None; shapes.len()],
            numel: shapes.iter().map(|s| crate::tensor::numel(s)).collect(),
            requires,
        };
        sink.grads[root.id] = Some(seed.data().to_vec());

        let mut out = HashMap::new();
        for id in (0..=root.id).rev() {
            let Some(g) = sink.grads[id].take() else {
                continue;
            };
            if leaves[id] {
                out.insert(id, g);
                continue;
            }
            let f = self.inner.borrow_mut().nodes[id].backward.take();
            if let Some(f) = f {
                f(&g, &mut sink);
            }
        }

        Ok(Gradients {
            grads: out
                .into_iter()
                .map(|(id, g)| {
                    let t = Tensor::new(shapes[id].clone(), g).expect("adjoint matches node shape");
                    (id, t)
                })
                .collect(),
        })
    }
}

impl<T: Element> Var<T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_rc(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[T] {
        self.value.data()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    /// Same value as a fresh constant on the same tape.
    pub fn detach(&self) -> Var<T> {
        self.tape.leaf_rc(Rc::clone(&self.value), false)
    }

    /// Convenience wrapper for [`Tape::backward`].
    pub fn backward(&self) -> Result<Gradients<T>> {
        self.tape.backward(self)
    }
}
