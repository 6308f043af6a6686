//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation applied to tracked values in execution
//! order, so node inputs always precede the node. [`Tape::backward`] walks the
//! record in reverse and accumulates gradients. Values on the tape are never
//! mutated; every op appends a new node.
//!
//! ```
//! use rmlab_core::numerics::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).item().unwrap(), 6.0);
//! ```

use std::cell::RefCell;

use super::tensor::{self as k, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    LogSumExp(Var, usize),
    LogSoftmax(Var),
    MinOverAxis(Var, usize, Vec<usize>),
    Reshape(Var),
    Rows(Var, usize),
    Pick(Var, Vec<usize>),
    EmbeddingBag(Var, Vec<Vec<usize>>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; nodes the loss does not depend on get zeros.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn is_reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    /// Records a leaf (a parameter or a constant input).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn unary(&self, x: Var, f: impl FnOnce(&Tensor) -> Result<Tensor>, op: Op) -> Result<Var> {
        let value = f(&self.nodes.borrow()[x.0].value)?;
        Ok(self.push(value, op))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: Op,
    ) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)?
        };
        Ok(self.push(value, op))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, k::matmul, Op::MatMul(a, b))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, k::add, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, k::sub, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, k::mul, Op::Mul(a, b))
    }

    /// Elementwise minimum; the gradient goes to `a` on ties.
    pub fn minimum(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, k::minimum, Op::Minimum(a, b))
    }

    pub fn scale(&self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, |t| k::scale(t, c), Op::Scale(x, c))
    }

    pub fn neg(&self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn tanh(&self, x: Var) -> Result<Var> {
        self.unary(x, k::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.unary(x, k::sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&self, x: Var) -> Result<Var> {
        self.unary(x, k::softplus, Op::Softplus(x))
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        self.unary(x, k::exp, Op::Exp(x))
    }

    pub fn log(&self, x: Var) -> Result<Var> {
        self.unary(x, k::log, Op::Log(x))
    }

    /// Clamp to `[lo, hi]`; gradient passes where `lo <= x <= hi`.
    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(x, |t| k::clamp(t, lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn sum(&self, x: Var, axis: usize) -> Result<Var> {
        self.unary(x, |t| k::sum_axis(t, axis), Op::Sum(x, axis))
    }

    pub fn mean(&self, x: Var, axis: usize) -> Result<Var> {
        self.unary(x, |t| k::mean_axis(t, axis), Op::Mean(x, axis))
    }

    pub fn sum_all(&self, x: Var) -> Result<Var> {
        self.unary(x, k::sum_all, Op::SumAll(x))
    }

    pub fn mean_all(&self, x: Var) -> Result<Var> {
        self.unary(x, k::mean_all, Op::MeanAll(x))
    }

    pub fn logsumexp(&self, x: Var, axis: usize) -> Result<Var> {
        self.unary(x, |t| k::logsumexp(t, axis), Op::LogSumExp(x, axis))
    }

    pub fn log_softmax(&self, x: Var) -> Result<Var> {
        self.unary(x, k::log_softmax, Op::LogSoftmax(x))
    }

    /// Minimum along `axis`. The subgradient flows only to the argmin
    /// element (lowest index on ties), which is also returned.
    pub fn min_over_axis(&self, x: Var, axis: usize) -> Result<(Var, Vec<usize>)> {
        let (value, idx) = k::min_over_axis(&self.nodes.borrow()[x.0].value, axis)?;
        let v = self.push(value, Op::MinOverAxis(x, axis, idx.clone()));
        Ok((v, idx))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        self.unary(x, |t| t.reshape(shape), Op::Reshape(x))
    }

    pub fn rows(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.unary(x, |t| k::rows(t, start, end), Op::Rows(x, start))
    }

    pub fn pick(&self, x: Var, idx: &[usize]) -> Result<Var> {
        self.unary(x, |t| k::pick(t, idx), Op::Pick(x, idx.to_vec()))
    }

    pub fn embedding_bag<B: AsRef<[usize]>>(&self, table: Var, bags: &[B]) -> Result<Var> {
        let owned: Vec<Vec<usize>> = bags.iter().map(|b| b.as_ref().to_vec()).collect();
        self.unary(
            table,
            |t| k::embedding_bag(t, bags),
            Op::EmbeddingBag(table, owned),
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::ones(loss_value.shape()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let val = |v: Var| &nodes[v.0].value;
            let mut contributions: Vec<(Var, Tensor)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    contributions.push((*a, k::matmul_nt(&g, val(*b))?));
                    contributions.push((*b, k::matmul_tn(val(*a), &g)?));
                }
                Op::Add(a, b) => {
                    contributions.push((*a, k::reduce_to_shape(&g, val(*a).shape())));
                    contributions.push((*b, k::reduce_to_shape(&g, val(*b).shape())));
                }
                Op::Sub(a, b) => {
                    contributions.push((*a, k::reduce_to_shape(&g, val(*a).shape())));
                    let neg = g.map(|v| -v);
                    contributions.push((*b, k::reduce_to_shape(&neg, val(*b).shape())));
                }
                Op::Mul(a, b) => {
                    let ga = k::broadcast_binary(&g, val(*b), "mul_backward", |x, y| x * y)?;
                    let gb = k::broadcast_binary(&g, val(*a), "mul_backward", |x, y| x * y)?;
                    contributions.push((*a, k::reduce_to_shape(&ga, val(*a).shape())));
                    contributions.push((*b, k::reduce_to_shape(&gb, val(*b).shape())));
                }
                Op::Minimum(a, b) => {
                    // Route each output gradient to whichever input was selected.
                    let (va, vb) = (val(*a), val(*b));
                    let mask_a = k::broadcast_binary(va, vb, "minimum_backward", |x, y| {
                        if x <= y {
                            1.0
                        } else {
                            0.0
                        }
                    })?;
                    let ga = k::mul(&g, &mask_a)?;
                    let gb =
                        k::broadcast_binary(&g, &mask_a, "minimum_backward", |x, m| x * (1.0 - m))?;
                    contributions.push((*a, k::reduce_to_shape(&ga, va.shape())));
                    contributions.push((*b, k::reduce_to_shape(&gb, vb.shape())));
                }
                Op::Scale(x, c) => contributions.push((*x, g.map(|v| v * c))),
                Op::Tanh(x) => {
                    let y = &node.value;
                    contributions.push((*x, zip(&g, y, |g, y| g * (1.0 - y * y))));
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    contributions.push((*x, zip(&g, y, |g, y| g * y * (1.0 - y))));
                }
                Op::Softplus(x) => {
                    contributions.push((*x, zip(&g, val(*x), |g, x| g * k::sigmoid_scalar(x))));
                }
                Op::Exp(x) => {
                    contributions.push((*x, zip(&g, &node.value, |g, y| g * y)));
                }
                Op::Log(x) => {
                    contributions.push((*x, zip(&g, val(*x), |g, x| g / x)));
                }
                Op::Clamp(x, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    contributions.push((
                        *x,
                        zip(&g, val(*x), |g, x| if x >= lo && x <= hi { g } else { 0.0 }),
                    ));
                }
                Op::Sum(x, axis) => {
                    contributions.push((*x, expand_axis(&g, val(*x).shape(), *axis, 1.0)));
                }
                Op::Mean(x, axis) => {
                    let shape = val(*x).shape();
                    let inv = 1.0 / shape[*axis] as f64;
                    contributions.push((*x, expand_axis(&g, shape, *axis, inv)));
                }
                Op::SumAll(x) => {
                    contributions.push((*x, Tensor::full(val(*x).shape(), g.data()[0])));
                }
                Op::MeanAll(x) => {
                    let xv = val(*x);
                    let gv = g.data()[0] / xv.numel() as f64;
                    contributions.push((*x, Tensor::full(xv.shape(), gv)));
                }
                Op::LogSumExp(x, axis) => {
                    // d lse / dx = softmax along the axis.
                    let xv = val(*x);
                    let lse = expand_axis(&node.value, xv.shape(), *axis, 1.0);
                    let gx = expand_axis(&g, xv.shape(), *axis, 1.0);
                    let mut out = Vec::with_capacity(xv.numel());
                    for ((&xi, &li), &gi) in xv.data().iter().zip(lse.data()).zip(gx.data()) {
                        out.push(gi * (xi - li).exp());
                    }
                    contributions.push((*x, Tensor::new(xv.shape().to_vec(), out)?));
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let width = *y.shape().last().expect("log_softmax rank >= 1");
                    let mut out = Vec::with_capacity(y.numel());
                    for (yr, gr) in y.data().chunks(width).zip(g.data().chunks(width)) {
                        let gsum: f64 = gr.iter().sum();
                        out.extend(yr.iter().zip(gr).map(|(&yi, &gi)| gi - yi.exp() * gsum));
                    }
                    contributions.push((*x, Tensor::new(y.shape().to_vec(), out)?));
                }
                Op::MinOverAxis(x, axis, idx) => {
                    let shape = val(*x).shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let len = shape[*axis];
                    let inner: usize = shape[*axis + 1..].iter().product();
                    let mut out = Tensor::zeros(shape);
                    let data = out.data_mut();
                    for o in 0..outer {
                        for i in 0..inner {
                            let j = o * inner + i;
                            data[(o * len + idx[j]) * inner + i] += g.data()[j];
                        }
                    }
                    contributions.push((*x, out));
                }
                Op::Reshape(x) => contributions.push((*x, g.reshape(val(*x).shape())?)),
                Op::Rows(x, start) => {
                    let shape = val(*x).shape();
                    let inner: usize = shape[1..].iter().product();
                    let mut out = Tensor::zeros(shape);
                    out.data_mut()[start * inner..start * inner + g.numel()]
                        .copy_from_slice(g.data());
                    contributions.push((*x, out));
                }
                Op::Pick(x, idx) => {
                    let shape = val(*x).shape();
                    let cols = shape[1];
                    let mut out = Tensor::zeros(shape);
                    let data = out.data_mut();
                    for (r, &c) in idx.iter().enumerate() {
                        data[r * cols + c] += g.data()[r];
                    }
                    contributions.push((*x, out));
                }
                Op::EmbeddingBag(table, bags) => {
                    let shape = val(*table).shape();
                    let width = shape[1];
                    let mut out = Tensor::zeros(shape);
                    let data = out.data_mut();
                    for (b, bag) in bags.iter().enumerate() {
                        let inv = 1.0 / bag.len() as f64;
                        let g_row = &g.data()[b * width..(b + 1) * width];
                        for &t in bag {
                            for (d, &gv) in data[t * width..(t + 1) * width].iter_mut().zip(g_row) {
                                *d += gv * inv;
                            }
                        }
                    }
                    contributions.push((*table, out));
                }
            }
            for (input, contrib) in contributions {
                accumulate(&mut grads[input.0], contrib)?;
            }
            grads[id] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn zip(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| f(a, b))
        .collect();
    Tensor::new(g.shape().to_vec(), data).expect("same-shape zip")
}

/// Broadcasts a reduced tensor back along `axis` of `shape`, times `factor`.
fn expand_axis(g: &Tensor, shape: &[usize], axis: usize, factor: f64) -> Tensor {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let src = &g.data()[o * inner..(o + 1) * inner];
        for _ in 0..len {
            out.extend(src.iter().map(|&v| v * factor));
        }
    }
    Tensor::new(shape.to_vec(), out).expect("expand_axis shape")
}

fn accumulate(slot: &mut Option<Tensor>, contrib: Tensor) -> Result<()> {
    match slot {
        Some(existing) => {
            if existing.shape() != contrib.shape() {
                return Err(Error::dim("backward", existing.shape(), contrib.shape()));
            }
            for (e, c) in existing.data_mut().iter_mut().zip(contrib.data()) {
                *e += c;
            }
        }
        None => *slot = Some(contrib),
    }
    Ok(())
}
