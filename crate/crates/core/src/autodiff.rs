//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every kernel applied to [`Var`] handles in
//! evaluation order, so operands always precede their results. Calling
//! [`Tape::backward`] on a scalar walks the tape once in reverse and
//! returns a [`Gradients`] map for the leaves. A tape can be consumed by
//! backward only once.
//!
//! ```
//! use irflow_core::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0).unwrap());
//! let y = x.mul(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item().unwrap(), 6.0);
//! ```

use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{gemm_nt, gemm_tn, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SquaredError(NodeId, NodeId),
    ConcatLast(NodeId, NodeId),
    BroadcastRows(NodeId),
    BroadcastScalar(NodeId),
    Reshape(NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Var({:?}, {:?})", self.id.0, self.tape.value(*self))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input; its gradient is reported by backward.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// An input that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, var: Var<'_>) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[var.id.0].value)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    fn requires_grad(&self, ids: &[NodeId]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|id| nodes[id.0].requires_grad)
    }

    fn record(&self, op: Op, operands: &[NodeId], f: impl FnOnce(&[Node]) -> Result<Tensor>) -> Result<Var<'_>> {
        let value = f(&self.nodes.borrow())?;
        let rg = self.requires_grad(operands);
        Ok(self.push(value, op, rg))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !core::ptr::eq(self, loss.tape) {
            return Err(Error::Backward("loss was recorded on a different tape"));
        }
        if self.consumed.replace(true) {
            return Err(Error::Backward("tape already consumed by a previous backward"));
        }
        let nodes = self.nodes.borrow();
        let root = loss.id.0;
        if nodes[root].value.len() != 1 {
            self.consumed.set(false);
            return Err(Error::Backward("loss must be a single-element tensor"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        let mut leaves: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root] = Some(vec![1.0]);

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut send = |target: NodeId, contrib: Vec<f64>| {
                if !nodes[target.0].requires_grad {
                    return;
                }
                match &mut grads[target.0] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            };
            let val = |n: NodeId| &nodes[n.0].value;
            match &node.op {
                Op::Leaf => {
                    leaves[id] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                Op::Constant => {}
                Op::Add(a, b) => {
                    send(*a, unbroadcast(&g, val(*a).len()));
                    send(*b, unbroadcast(&g, val(*b).len()));
                }
                Op::Sub(a, b) => {
                    send(*a, unbroadcast(&g, val(*a).len()));
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    send(*b, unbroadcast(&neg, val(*b).len()));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a).data(), val(*b).data());
                    let ga: Vec<f64> = (0..g.len()).map(|i| g[i] * pick(vb, i)).collect();
                    let gb: Vec<f64> = (0..g.len()).map(|i| g[i] * pick(va, i)).collect();
                    send(*a, unbroadcast(&ga, va.len()));
                    send(*b, unbroadcast(&gb, vb.len()));
                }
                Op::Scale(a, s) => send(*a, g.iter().map(|v| s * v).collect()),
                Op::MatMul(a, b) => {
                    let (m, k) = val(*a).as_matrix("matmul")?;
                    let (_, n) = val(*b).as_matrix("matmul")?;
                    if nodes[a.0].requires_grad {
                        let mut ga = vec![0.0; m * k];
                        gemm_nt(&g, val(*b).data(), &mut ga, m, n, k);
                        send(*a, ga);
                    }
                    if nodes[b.0].requires_grad {
                        let mut gb = vec![0.0; k * n];
                        gemm_tn(val(*a).data(), &g, &mut gb, m, k, n);
                        send(*b, gb);
                    }
                }
                Op::Relu(a) => {
                    let x = val(*a).data();
                    send(
                        *a,
                        g.iter()
                            .zip(x)
                            .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                            .collect(),
                    );
                }
                Op::Sin(a) => {
                    let x = val(*a).data();
                    send(*a, g.iter().zip(x).map(|(gi, &xi)| gi * crate::math::cos(xi)).collect());
                }
                Op::Cos(a) => {
                    let x = val(*a).data();
                    send(
                        *a,
                        g.iter().zip(x).map(|(gi, &xi)| -gi * crate::math::sin(xi)).collect(),
                    );
                }
                Op::Sum(a) => send(*a, vec![g[0]; val(*a).len()]),
                Op::Mean(a) => {
                    let n = val(*a).len();
                    send(*a, vec![g[0] / n as f64; n]);
                }
                Op::SquaredError(a, b) => {
                    let (va, vb) = (val(*a).data(), val(*b).data());
                    let d: Vec<f64> = va.iter().zip(vb).map(|(x, y)| 2.0 * g[0] * (x - y)).collect();
                    if nodes[b.0].requires_grad {
                        send(*b, d.iter().map(|v| -v).collect());
                    }
                    send(*a, d);
                }
                Op::ConcatLast(a, b) => {
                    let ca = *val(*a).shape().last().unwrap_or(&1);
                    let cb = *val(*b).shape().last().unwrap_or(&1);
                    let rows = val(*a).len() / ca;
                    let mut ga = Vec::with_capacity(rows * ca);
                    let mut gb = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        let row = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::BroadcastRows(a) => {
                    let n = val(*a).len();
                    let mut ga = vec![0.0; n];
                    for chunk in g.chunks_exact(n) {
                        for (acc, v) in ga.iter_mut().zip(chunk) {
                            *acc += v;
                        }
                    }
                    send(*a, ga);
                }
                Op::BroadcastScalar(a) => send(*a, vec![g.iter().sum()]),
                Op::Reshape(a) => send(*a, g),
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { leaves, shapes })
    }
}

fn pick(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

fn unbroadcast(g: &[f64], target_len: usize) -> Vec<f64> {
    if target_len == g.len() {
        g.to_vec()
    } else {
        vec![g.iter().sum()]
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for a leaf. Leaves that the loss does not depend on get zeros.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.leaves.get(var.id.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::from_parts(
                self.shapes[var.id.0].clone(),
                vec![0.0; self.shapes[var.id.0].iter().product()],
            ),
        }
    }

    pub fn take(&mut self, var: Var<'_>) -> Tensor {
        match self.leaves.get_mut(var.id.0).and_then(Option::take) {
            Some(g) => g,
            None => {
                let shape = self.shapes[var.id.0].clone();
                let len = shape.iter().product();
                Tensor::from_parts(shape, vec![0.0; len])
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Copy of the recorded value.
    pub fn value(&self) -> Tensor {
        self.tape.value(*self).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(*self).shape().to_vec()
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if core::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Backward("operands recorded on different tapes"))
        }
    }

    fn binary(&self, other: Var<'t>, op: Op, f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (a, b) = (self.id, other.id);
        self.tape.record(op, &[a, b], |n| f(&n[a.0].value, &n[b.0].value))
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let a = self.id;
        self.tape.record(op, &[a], |n| f(&n[a.0].value))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), Tensor::add)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), Tensor::sub)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), Tensor::mul)
    }

    pub fn scale(&self, s: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, s), |a| Ok(a.scale(s)))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul(self.id, other.id), Tensor::matmul)
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), |a| Ok(a.relu()))
    }

    pub fn sin(&self) -> Result<Var<'t>> {
        self.unary(Op::Sin(self.id), |a| Ok(a.sin()))
    }

    pub fn cos(&self) -> Result<Var<'t>> {
        self.unary(Op::Cos(self.id), |a| Ok(a.cos()))
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        self.unary(Op::Sum(self.id), |a| Ok(a.sum()))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        self.unary(Op::Mean(self.id), |a| Ok(a.mean()))
    }

    /// Scalar `Σ (self - other)²`.
    pub fn squared_error(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::SquaredError(self.id, other.id), Tensor::squared_error)
    }

    pub fn concat_last(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::ConcatLast(self.id, other.id), Tensor::concat_last)
    }

    pub fn broadcast_rows(&self, rows: usize) -> Result<Var<'t>> {
        self.unary(Op::BroadcastRows(self.id), |a| a.broadcast_rows(rows))
    }

    pub fn broadcast_scalar(&self, shape: &[usize]) -> Result<Var<'t>> {
        self.unary(Op::BroadcastScalar(self.id), |a| a.broadcast_scalar(shape))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        self.unary(Op::Reshape(self.id), |a| a.reshape(shape.to_vec()))
    }

    /// `self - weight * d`, recorded as a scale followed by a subtraction.
    pub fn euler_update(&self, weight: f64, d: Var<'t>) -> Result<Var<'t>> {
        self.sub(d.scale(weight)?)
    }
}

/// Worst norm-wise relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)` between the
/// tape gradient `g` of `f` and central differences `ĝ` with the given
/// step, over every input.
pub fn gradient_error<F>(inputs: &[Tensor], step: f64, f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        f(&tape, &vars)?.value().item()
    };
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut worst: f64 = 0.0;
    let mut moved = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]);
        let (mut diff, mut num_sq) = (0.0, 0.0);
        for j in 0..input.len() {
            let mut at = |d: f64| -> Result<f64> {
                let mut data = input.data().to_vec();
                data[j] += d;
                moved[k] = Tensor::new(input.shape().to_vec(), data)?;
                eval(&moved)
            };
            let num = (at(step)? - at(-step)?) / (2.0 * step);
            diff += (analytic.data()[j] - num) * (analytic.data()[j] - num);
            num_sq += num * num;
        }
        moved[k] = input.clone();
        let scale = crate::math::sqrt(analytic.sum_squares().max(num_sq));
        if scale > 0.0 {
            worst = worst.max(crate::math::sqrt(diff) / scale);
        }
    }
    Ok(worst)
}
