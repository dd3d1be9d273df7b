//! Tape-based reverse-mode differentiation.
//!
//! Each differentiable op appends one node holding its output value and the
//! information its backward rule needs. [`Tape::backward`] walks the nodes in
//! reverse execution order exactly once, accumulates leaf gradients and then
//! clears the tape.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;

use crate::error::{Result, TensorError};
use crate::kernels::conv::ConvGeom;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    MulConst(usize, Vec<T>),
    MulScalarVar { x: usize, s: usize },
    LeakyRelu(usize, T),
    Sigmoid(usize),
    Log(usize),
    Clamp(usize, T, T),
    Sum(usize),
    Mean(usize),
    SumAxis { x: usize, outer: usize, len: usize, inner: usize },
    Reshape(usize),
    Permute { x: usize, axes: Vec<usize> },
    Concat { xs: Vec<usize>, outer: usize, chunks: Vec<usize> },
    MatMul { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize },
    Conv2d { x: usize, w: usize, b: usize, geom: ConvGeom },
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<T>, inv_std: Vec<T> },
    Linear { x: usize, w: usize, b: usize, rows: usize, d_in: usize, d_out: usize },
    AvgPool { x: usize, planes: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize },
    Upsample2x { x: usize, planes: usize, h: usize, w: usize, a: f64 },
    Softmax { x: usize, outer: usize, len: usize, inner: usize },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Scale(x, _) | AddScalar(x) | MulConst(x, _) | LeakyRelu(x, _) | Sigmoid(x) | Log(x)
            | Clamp(x, _, _) | Sum(x) | Mean(x) | Reshape(x) => vec![*x],
            MulScalarVar { x, s } => vec![*x, *s],
            SumAxis { x, .. } | Permute { x, .. } | AvgPool { x, .. } | Upsample2x { x, .. } | Softmax { x, .. } => vec![*x],
            Concat { xs, .. } => xs.clone(),
            MatMul { a, b, .. } => vec![*a, *b],
            Conv2d { x, w, b, .. } | Linear { x, w, b, .. } => vec![*x, *w, *b],
            BatchNorm { x, gamma, beta, .. } | LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Records executed ops for one forward/backward pass.
pub struct Tape<T: Scalar> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
    generation: Cell<u64>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            generation: Cell::new(0),
        }
    }

    /// Input or parameter node.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node; outstanding [`Var`]s become stale.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.generation.set(self.generation.get() + 1);
    }

    /// Which side of every kink the recorded forward pass took: the sign of
    /// each leaky-ReLU input and the region of each clamp input. Two passes
    /// with equal signatures evaluated the same smooth branch.
    pub fn branch_signature(&self) -> Vec<u8> {
        let nodes = self.nodes.borrow();
        let mut sig = Vec::new();
        for node in nodes.iter() {
            match node.op {
                Op::LeakyRelu(x, _) => sig.extend(nodes[x].value.data().iter().map(|&v| (v >= T::zero()) as u8)),
                Op::Clamp(x, lo, hi) => sig.extend(nodes[x].value.data().iter().map(|&v| {
                    if v < lo {
                        0
                    } else if v > hi {
                        2
                    } else {
                        1
                    }
                })),
                _ => {}
            }
        }
        sig
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        debug_assert!(
            matches!(op, Op::Leaf)
                || value.all_finite()
                || op.inputs().iter().any(|&i| !nodes[i].value.all_finite()),
            "non-finite forward output from finite inputs"
        );
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
            generation: self.generation.get(),
        }
    }

    /// Reverse sweep from a scalar `loss`. Gradients of every leaf that
    /// requires them are returned; the tape is cleared afterwards.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        loss.check()?;
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.id + 1, || None);
        if loss_node.requires_grad {
            grads[loss.id] = Some(vec![T::one()]);
        }
        for id in (0..=loss.id).rev() {
            if matches!(nodes[id].op, Op::Leaf) {
                continue;
            }
            if let Some(g) = grads[id].take() {
                crate::backward::apply(&nodes, id, &g, &mut grads);
            }
        }
        let mut leaf = HashMap::new();
        for (id, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if nodes[id].requires_grad {
                    leaf.insert(id, Tensor::new(nodes[id].value.shape().to_vec(), g)?);
                }
            }
        }
        let generation = self.generation.get();
        drop(nodes);
        self.clear();
        Ok(Gradients { leaf, generation })
    }
}

/// Leaf gradients produced by one [`Tape::backward`] call.
pub struct Gradients<T> {
    leaf: HashMap<usize, Tensor<T>>,
    generation: u64,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a leaf of the tape this was computed on; `None` when the
    /// leaf did not require gradients or was unreachable from the loss.
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        if var.generation != self.generation {
            return None;
        }
        self.leaf.get(&var.id)
    }

    pub fn len(&self) -> usize {
        self.leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaf.is_empty()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
    generation: u64,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub(crate) fn check(&self) -> Result<()> {
        if self.generation != self.tape.generation.get() {
            return Err(TensorError::StaleVar);
        }
        Ok(())
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Borrows the node value. The borrow must end before the next op is
    /// recorded on the same tape.
    pub fn value(&self) -> Ref<'_, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn tensor(&self) -> Tensor<T> {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a single-element node.
    pub fn item(&self) -> T {
        self.value().data()[0]
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, T>) -> Result<()> {
        self.check()?;
        other.check()?;
        if !std::ptr::eq(self.tape, other.tape) {
            return Err(TensorError::shape("binary op", "operands live on different tapes"));
        }
        Ok(())
    }
}
