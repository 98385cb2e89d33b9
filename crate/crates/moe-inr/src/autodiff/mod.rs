//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a define-by-run tape: every [`Graph::apply`] call computes a
//! forward value and records an op node. [`Graph::backward`] walks the tape in
//! reverse from a scalar loss and accumulates adjoints for every node that can
//! reach a parameter. Graphs are rebuilt each training iteration.

mod adam;
mod check;
mod ops;

pub use adam::{AdamConfig, AdamState};
pub use check::finite_diff_check;
pub use ops::Op;
pub(crate) use ops::kernels;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense multi-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {:?} implies {} values, got {}", shape, expect, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![S::zero(); n] }
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![v; n] }
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(v: S) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn from_vec(data: Vec<S>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// First element; the value of a scalar tensor.
    pub fn item(&self) -> S {
        self.data[0]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn get2(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) id: usize,
}

pub(crate) struct Node<S> {
    pub(crate) op: Op<S>,
    pub(crate) inputs: Vec<usize>,
    pub(crate) value: Tensor<S>,
    pub(crate) needs_grad: bool,
}

/// Define-by-run computation tape.
pub struct Graph<S: Scalar> {
    pub(crate) nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<S>, inputs: Vec<usize>, value: Tensor<S>, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { op, inputs, value, needs_grad });
        Var { id }
    }

    /// Insert a trainable leaf. Its gradient is retrievable after `backward`.
    pub fn param(&mut self, value: &Tensor<S>) -> Var {
        self.push(Op::Param, vec![], value.clone(), true)
    }

    /// Insert a non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(Op::Const, vec![], value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.id].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.id].value.shape()
    }

    /// Apply an op, validate shapes, compute the forward value, record a node.
    ///
    /// Every produced value is scanned for NaN/Inf; a non-finite result is an
    /// error rather than a silent poisoned graph.
    pub fn apply(&mut self, op: Op<S>, inputs: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<S>> = inputs.iter().map(|v| &self.nodes[v.id].value).collect();
        let value = ops::forward(&op, &tensors)?;
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.id].needs_grad);
        Ok(self.push(op, inputs.iter().map(|v| v.id).collect(), value, needs_grad))
    }

    // Convenience wrappers.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }

    /// Elementwise add; the second operand may be a `[1, n]` row broadcast
    /// over the batch.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn mul_scalar(&mut self, a: Var, c: S) -> Result<Var> {
        self.apply(Op::MulScalar(c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Result<Var> {
        self.apply(Op::AddScalar(c), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Square, &[a])
    }

    /// `sin(scale * x)`.
    pub fn sin(&mut self, a: Var, scale: S) -> Result<Var> {
        self.apply(Op::Sin { scale }, &[a])
    }

    /// Variable-periodic activation `sin((|x| + 1) * x)`.
    pub fn finer(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Finer, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Softplus, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Exp, &[a])
    }

    /// Natural log with the input floored at 1e-12.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Log, &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Abs, &[a])
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        self.apply(Op::ConcatLast, inputs)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::SoftmaxLast, &[a])
    }

    /// Sum over `axis` (keeping the axis as size 1), or over everything when
    /// `axis` is `None` (result shape `[1]`).
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.apply(Op::Sum { axis }, &[a])
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.apply(Op::Mean { axis }, &[a])
    }

    /// Column-wise max over the batch axis, shape `[m, n] -> [1, n]`.
    pub fn batch_max(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::BatchMax, &[a])
    }

    /// Reverse sweep from a scalar loss. Returns adjoints for every parameter
    /// node reachable from `loss`; unreachable parameters simply have no
    /// entry (treated as zero by [`Gradients::take_or_zeros`]).
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let lnode = &self.nodes[loss.id];
        if !lnode.value.is_scalar() {
            return Err(Error::NonScalarLoss(lnode.value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.id] = Some(vec![S::one()]);
        for id in (0..=loss.id).rev() {
            if adj[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = adj[id].take().unwrap();
            if matches!(self.nodes[id].op, Op::Param) {
                adj[id] = Some(g);
                continue;
            }
            ops::backward_into(&self.nodes, id, &g, &mut adj);
        }
        let mut grads = vec![None; self.nodes.len()];
        for (id, slot) in adj.into_iter().enumerate() {
            if let (Some(g), Op::Param) = (slot, &self.nodes[id].op) {
                let shape = self.nodes[id].value.shape().to_vec();
                grads[id] = Some(Tensor { shape, data: g });
            }
        }
        Ok(Gradients { grads })
    }
}

/// Per-parameter adjoints produced by [`Graph::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros when `v` was unreachable from the loss.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor<S> {
        self.grads
            .get_mut(v.id)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}
