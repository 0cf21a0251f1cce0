//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records one computation as a flat list of nodes.  Each node
//! holds its forward value and a backward closure that maps the upstream
//! gradient to per-parent gradient contributions.  Calling
//! [`Var::backward`] on a scalar result sweeps the list once in reverse:
//!
//! ```text
//! grad[result] = 1
//! for node id from result down to 0:
//!     for (parent, contribution) in node.backward(grad[id]):
//!         grad[parent] += contribution
//! ```
//!
//! Tapes are single-threaded and cheap to build; the training loop records
//! a fresh tape for every step.  Distinct tapes never share state, so
//! independent loss evaluations may run on separate threads.

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::Tensor;

pub(crate) type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) parents: Vec<usize>,
    pub(crate) backward: Option<BackwardFn>,
}

/// Shared, growable record of one computation.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<Vec<Node>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            inner: Rc::new(RefCell::new(Vec::new())),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record an input node.  Leaves have no parents; gradients flow into
    /// them but not through them.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None)
    }

    /// Record a scalar input node.
    pub fn scalar(&self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    pub(crate) fn push(&self, value: Tensor, parents: Vec<usize>, backward: Option<BackwardFn>) -> Var {
        let mut nodes = self.inner.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            parents,
            backward,
        });
        Var {
            tape: self.clone(),
            id,
        }
    }

    /// Record an arbitrary differentiable operation.  `backward` receives
    /// the upstream gradient and must return one contribution per parent,
    /// in the same order as `parents`.
    pub(crate) fn custom(&self, value: Tensor, parents: &[&Var], backward: BackwardFn) -> Var {
        for p in parents {
            assert!(
                Rc::ptr_eq(&self.inner, &p.tape.inner),
                "custom op: operands recorded on different tapes"
            );
        }
        let ids = parents.iter().map(|p| p.id).collect();
        self.push(value, ids, Some(backward))
    }

    pub(crate) fn value_of(&self, id: usize) -> Tensor {
        self.inner.borrow()[id].value.clone()
    }
}

/// Handle to one node of a [`Tape`].
#[derive(Clone)]
pub struct Var {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &self.value())
            .finish()
    }
}

impl Var {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Forward value of this node (cheap: shares the underlying buffer).
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Run the reverse sweep from this scalar node and collect gradients.
    ///
    /// Panics if the node is not a single-element tensor.
    pub fn backward(&self) -> Gradients {
        let nodes = self.tape.inner.borrow();
        assert_eq!(
            nodes[self.id].value.len(),
            1,
            "backward: root must be scalar, got shape {:?}",
            nodes[self.id].value.shape()
        );
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[self.id] = Some(Tensor::new(nodes[self.id].value.shape().to_vec(), vec![1.0]));
        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].clone() else { continue };
            let node = &nodes[id];
            let Some(back) = &node.backward else { continue };
            let contributions = back(&g);
            assert_eq!(
                contributions.len(),
                node.parents.len(),
                "backward of node {id}: wrong number of parent gradients"
            );
            for (pid, c) in node.parents.iter().zip(contributions) {
                accumulate(&mut grads[*pid], c);
            }
        }
        Gradients { grads }
    }
}

fn accumulate(slot: &mut Option<Tensor>, c: Tensor) {
    match slot {
        None => *slot = Some(c),
        Some(t) => {
            assert_eq!(t.shape(), c.shape(), "gradient accumulation shape mismatch");
            let sum: Vec<f64> = t.iter().zip(c.iter()).map(|(a, b)| a + b).collect();
            *slot = Some(t.with_data(sum));
        }
    }
}

/// Gradients of one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or an all-zero tensor of matching shape when no
    /// gradient reached it.
    pub fn get(&self, v: &Var) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&v.value().shape().to_vec()),
        }
    }
}
