//! Dense row-major `f64` tensors and the forward kernels shared by the
//! inference path and the autodiff tape.
//!
//! Every kernel computes each output element in a fixed order that does not
//! depend on the other rows of a batch, so a row evaluated alone and the same
//! row evaluated inside a larger batch produce bit-identical values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::input(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::dim("item", &self.shape, &[1]));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::Numeric { op })
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn rows_cols(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::dim(op, &self.shape, &[0, 0])),
        }
    }

    /// Splits the shape around `axis` into (outer, len, inner) extents.
    fn axis_extents(&self, axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(Error::dim(op, &self.shape, &[axis]));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    fn shape_without(&self, axis: usize) -> Vec<usize> {
        let mut s = self.shape.clone();
        s.remove(axis);
        s
    }
}

// ---------------------------------------------------------------------------
// Matrix products

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.rows_cols("matmul")?;
    let (k2, n) = b.rows_cols("matmul")?;
    if k != k2 {
        return Err(Error::dim("matmul", &a.shape, &b.shape));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b.data[kk * n..(kk + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)?.check_finite("matmul")
}

/// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.rows_cols("matmul_nt")?;
    let (n, k2) = b.rows_cols("matmul_nt")?;
    if k != k2 {
        return Err(Error::dim("matmul_nt", &a.shape, &b.shape));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `aᵀ · b` for `a: [k, m]`, `b: [k, n]`.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.rows_cols("matmul_tn")?;
    let (k2, n) = b.rows_cols("matmul_tn")?;
    if k != k2 {
        return Err(Error::dim("matmul_tn", &a.shape, &b.shape));
    }
    let mut out = vec![0.0; m * n];
    for kk in 0..k {
        let a_row = &a.data[kk * m..(kk + 1) * m];
        let b_row = &b.data[kk * n..(kk + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let o_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

// ---------------------------------------------------------------------------
// Broadcasting

/// NumPy-style broadcast of two shapes (right-aligned, size-1 dims stretch).
pub fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let db = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::dim(op, a, b)),
        };
    }
    Ok(out)
}

/// Element strides of `shape` viewed inside `out_shape`, zero where broadcast.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let offset = out_shape.len() - shape.len();
    let mut strides = vec![0; out_shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

pub(crate) fn broadcast_binary(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape.clone(), data)?.check_finite(op);
    }
    let out_shape = broadcast_shape(&a.shape, &b.shape, op)?;
    let n: usize = out_shape.iter().product();
    let mut data = Vec::with_capacity(n);
    if out_shape == a.shape && a.shape.ends_with(&b.shape) {
        // b repeats along the leading dims of a (bias-style).
        for chunk in a.data.chunks(b.numel()) {
            data.extend(chunk.iter().zip(&b.data).map(|(&x, &y)| f(x, y)));
        }
    } else if out_shape == b.shape && b.shape.ends_with(&a.shape) {
        for chunk in b.data.chunks(a.numel()) {
            data.extend(chunk.iter().zip(&a.data).map(|(&y, &x)| f(x, y)));
        }
    } else {
        let sa = broadcast_strides(&a.shape, &out_shape);
        let sb = broadcast_strides(&b.shape, &out_shape);
        let mut idx = vec![0usize; out_shape.len()];
        for _ in 0..n {
            let ia: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
            let ib: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
            data.push(f(a.data[ia], b.data[ib]));
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
    Tensor::new(out_shape, data)?.check_finite(op)
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn reduce_to_shape(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape == shape {
        return g.clone();
    }
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    if g.shape.ends_with(shape) {
        for chunk in g.data.chunks(n) {
            for (o, &v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
    } else {
        let strides = broadcast_strides(shape, &g.shape);
        let mut idx = vec![0usize; g.shape.len()];
        for &v in &g.data {
            let i: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            out[i] += v;
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < g.shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data: out,
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_binary(a, b, "add", |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_binary(a, b, "sub", |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_binary(a, b, "mul", |x, y| x * y)
}

/// Elementwise minimum; ties select `a`.
pub fn minimum(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_binary(a, b, "minimum", |x, y| if x <= y { x } else { y })
}

// ---------------------------------------------------------------------------
// Elementwise functions

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow for large `x` or cancellation for very
/// negative `x`.
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn tanh(x: &Tensor) -> Result<Tensor> {
    x.map(f64::tanh).check_finite("tanh")
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    x.map(sigmoid_scalar).check_finite("sigmoid")
}

pub fn softplus(x: &Tensor) -> Result<Tensor> {
    x.map(softplus_scalar).check_finite("softplus")
}

pub fn exp(x: &Tensor) -> Result<Tensor> {
    x.map(f64::exp).check_finite("exp")
}

pub fn log(x: &Tensor) -> Result<Tensor> {
    if let Some(&bad) = x.data.iter().find(|&&v| v <= 0.0 || v.is_nan()) {
        return Err(Error::Contract(format!("log of non-positive value {bad}")));
    }
    x.map(f64::ln).check_finite("log")
}

pub fn clamp(x: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
    if lo > hi {
        return Err(Error::input(format!("clamp bounds inverted: {lo} > {hi}")));
    }
    x.map(|v| v.clamp(lo, hi)).check_finite("clamp")
}

pub fn scale(x: &Tensor, c: f64) -> Result<Tensor> {
    x.map(|v| v * c).check_finite("scale")
}

// ---------------------------------------------------------------------------
// Reductions

pub fn sum_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = x.axis_extents(axis, "sum")?;
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let src = &x.data[(o * len + l) * inner..(o * len + l + 1) * inner];
            for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d += v;
            }
        }
    }
    Tensor::new(x.shape_without(axis), out)?.check_finite("sum")
}

pub fn mean_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let len = *x
        .shape
        .get(axis)
        .ok_or_else(|| Error::dim("mean", &x.shape, &[axis]))?;
    let s = sum_axis(x, axis)?;
    scale(&s, 1.0 / len as f64)
}

pub fn sum_all(x: &Tensor) -> Result<Tensor> {
    Tensor::scalar(x.data.iter().sum()).check_finite("sum_all")
}

pub fn mean_all(x: &Tensor) -> Result<Tensor> {
    Tensor::scalar(x.data.iter().sum::<f64>() / x.numel() as f64).check_finite("mean_all")
}

pub fn logsumexp(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = x.axis_extents(axis, "logsumexp")?;
    if !x.is_finite() {
        return Err(Error::Numeric { op: "logsumexp" });
    }
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| x.data[(o * len + l) * inner + i];
            let m = (0..len).map(at).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (0..len).map(|l| (at(l) - m).exp()).sum();
            out[o * inner + i] = m + s.ln();
        }
    }
    Tensor::new(x.shape_without(axis), out)?.check_finite("logsumexp")
}

/// Log-softmax over the last axis.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let width = *x
        .shape
        .last()
        .ok_or_else(|| Error::dim("log_softmax", &x.shape, &[1]))?;
    if !x.is_finite() {
        return Err(Error::Numeric { op: "log_softmax" });
    }
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data.chunks(width) {
        let lse = row_logsumexp(row);
        out.extend(row.iter().map(|&v| v - lse));
    }
    Tensor::new(x.shape.clone(), out)?.check_finite("log_softmax")
}

fn row_logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// Minimum along `axis` with the argmin of each slice; ties resolve to the
/// lowest index.
pub fn min_over_axis(x: &Tensor, axis: usize) -> Result<(Tensor, Vec<usize>)> {
    let (outer, len, inner) = x.axis_extents(axis, "min_over_axis")?;
    let mut vals = vec![0.0; outer * inner];
    let mut idx = vec![0usize; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut best = 0;
            let mut best_v = x.data[o * len * inner + i];
            for l in 1..len {
                let v = x.data[(o * len + l) * inner + i];
                if v < best_v {
                    best = l;
                    best_v = v;
                }
            }
            vals[o * inner + i] = best_v;
            idx[o * inner + i] = best;
        }
    }
    Ok((
        Tensor::new(x.shape_without(axis), vals)?.check_finite("min_over_axis")?,
        idx,
    ))
}

// ---------------------------------------------------------------------------
// Indexing

/// Picks `x[i, idx[i]]` from a matrix.
pub fn pick(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (rows, cols) = x.rows_cols("pick")?;
    if idx.len() != rows {
        return Err(Error::dim("pick", &x.shape, &[idx.len()]));
    }
    let mut out = Vec::with_capacity(rows);
    for (r, &c) in idx.iter().enumerate() {
        if c >= cols {
            return Err(Error::input(format!(
                "pick index {c} out of range for {cols} columns"
            )));
        }
        out.push(x.data[r * cols + c]);
    }
    Ok(Tensor::vector(out))
}

/// Rows `start..end` along axis 0.
pub fn rows(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let n = *x
        .shape
        .first()
        .ok_or_else(|| Error::dim("rows", &x.shape, &[end]))?;
    if start >= end || end > n {
        return Err(Error::dim("rows", &x.shape, &[start, end]));
    }
    let inner: usize = x.shape[1..].iter().product();
    let mut shape = x.shape.clone();
    shape[0] = end - start;
    Tensor::new(shape, x.data[start * inner..end * inner].to_vec())
}

/// Mean of embedding-table rows for each bag of token ids: `[bags, width]`.
pub fn embedding_bag<B: AsRef<[usize]>>(table: &Tensor, bags: &[B]) -> Result<Tensor> {
    let (vocab, width) = table.rows_cols("embedding_bag")?;
    if bags.is_empty() {
        return Err(Error::input("embedding_bag needs at least one bag"));
    }
    let mut out = vec![0.0; bags.len() * width];
    for (b, bag) in bags.iter().enumerate() {
        let bag = bag.as_ref();
        if bag.is_empty() {
            return Err(Error::input("empty token sequence"));
        }
        let o_row = &mut out[b * width..(b + 1) * width];
        for &t in bag {
            if t >= vocab {
                return Err(Error::input(format!(
                    "token {t} out of range for vocabulary {vocab}"
                )));
            }
            for (o, &v) in o_row
                .iter_mut()
                .zip(&table.data[t * width..(t + 1) * width])
            {
                *o += v;
            }
        }
        let inv = 1.0 / bag.len() as f64;
        for o in o_row.iter_mut() {
            *o *= inv;
        }
    }
    Tensor::new(vec![bags.len(), width], out)?.check_finite("embedding_bag")
}
