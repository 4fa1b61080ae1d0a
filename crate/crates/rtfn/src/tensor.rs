//! Dense f64 tensors with shape metadata and an optional gradient buffer.
//!
//! Row-major layout throughout. Values are plain `Vec<f64>`; there is no
//! broadcasting machinery beyond the few patterns the network actually uses
//! (bias rows, scalar scaling), which keeps shape bugs loud.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// N-dimensional array of 64-bit reals.
///
/// Invariants: `shape.iter().product() == data.len()`, every dimension is
/// positive (an empty `shape` denotes a scalar), and `grad`, when present,
/// has the same length as `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid("tensor", format!("zero dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeData {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
            grad: None,
        }
    }

    /// Rank-1 tensor over the given values.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    /// Rank-2 tensor from nested rows. Rows must agree in length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("from_rows", "ragged rows"));
        }
        Self::new(vec![m, n], rows.concat())
    }

    /// Uniform random tensor on `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(lo, hi)).collect();
        Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::invalid(
                "item",
                format!("tensor of shape {:?} is not a scalar", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.grad.as_mut()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::ShapeData {
                shape: self.shape.clone(),
                expected: self.data.len(),
                actual: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    fn zip(&self, rhs: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
            grad: None,
        })
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip(rhs, "sub", |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip(rhs, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| c * v)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let data = mm_nn(&self.data, &rhs.data, m, k, n);
        Tensor::new(vec![m, n], data)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transposed(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("transpose")?;
        Tensor::new(vec![n, m], transpose2(&self.data, m, n))
    }

    /// Row-wise softmax of a rank-2 tensor, computed with per-row max
    /// subtraction so large logits cannot overflow.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("softmax_rows")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(&self.data[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        Tensor::new(vec![m, n], out)
    }

    /// Arithmetic mean along `axis`; the axis is removed from the shape.
    pub fn reduce_mean(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::AxisOutOfRange {
                op: "reduce_mean",
                axis,
                rank: self.rank(),
            });
        }
        let len = self.shape[axis];
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &self.data[(o * len + a) * inner..(o * len + a + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let inv = 1.0 / len as f64;
        for v in &mut out {
            *v *= inv;
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Tensor::new(shape, out)
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::invalid(
                op,
                format!("expected rank-2 tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub(crate) fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::invalid(
                op,
                format!("expected rank-3 tensor, got shape {:?}", self.shape),
            )),
        }
    }
}

/// Concatenate along `axis`. All parts must agree on every other axis.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat", "empty part list"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::AxisOutOfRange {
            op: "concat",
            axis,
            rank,
        });
    }
    let mut axis_total = 0;
    for p in parts {
        if p.rank() != rank
            || p.shape[..axis] != first.shape[..axis]
            || p.shape[axis + 1..] != first.shape[axis + 1..]
        {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first.shape.clone(),
                rhs: p.shape.clone(),
            });
        }
        axis_total += p.shape[axis];
    }
    let outer: usize = first.shape[..axis].iter().product();
    let inner: usize = first.shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * axis_total * inner];
    let mut offset = 0;
    for p in parts {
        let width = p.shape[axis] * inner;
        for o in 0..outer {
            let src = &p.data[o * width..(o + 1) * width];
            let dst_start = o * axis_total * inner + offset;
            out[dst_start..dst_start + width].copy_from_slice(src);
        }
        offset += width;
    }
    let mut shape = first.shape.clone();
    shape[axis] = axis_total;
    Tensor::new(shape, out)
}

/// Named trainable tensor plus optimizer state.
#[derive(Debug, Clone)]
pub struct Parameter {
    /// Dotted path unique within one model, e.g. `tfn.stem0.conv.weight`.
    pub name: String,
    pub value: Tensor,
    /// RMS accumulator; elementwise nonnegative at all times.
    pub rms_acc: Tensor,
    pub momentum_buf: Tensor,
    /// Whether this parameter participates in the L2 penalty.
    pub decay: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, decay: bool) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            value,
            rms_acc: Tensor::zeros(&shape),
            momentum_buf: Tensor::zeros(&shape),
            decay,
        }
    }

    /// Weight initialization: uniform on ±sqrt(1/fan_in), which keeps
    /// activations O(1) at the first forward pass.
    pub fn uniform_init(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        decay: bool,
        rng: &mut Rng,
    ) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        Self::new(name, Tensor::rand_uniform(shape, -bound, bound, rng), decay)
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

// ── shared numeric kernels ──────────────────────────────────────────────

/// C[m,n] = A[m,k] · B[k,n]. ikj loop order: the inner loop is a contiguous
/// axpy over an output row, and for fixed (i,j) the k-terms accumulate in
/// ascending order, matching a plain triple loop bit for bit.
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    mm_nn_into(a, b, m, k, n, &mut c);
    c
}

pub(crate) fn mm_nn_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    let threads = crate::threads();
    let row = |i: usize, crow: &mut [f64]| {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if threads > 1 && m > 1 && m * k * n > 1 << 14 {
        use rayon::prelude::*;
        c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| row(i, crow));
    } else {
        for (i, crow) in c.chunks_mut(n).enumerate() {
            row(i, crow);
        }
    }
}

/// C[m,k] = A[m,n] · B[k,n]ᵀ (B passed untransposed). Inner loop is a dot of
/// two contiguous rows. Used on gradient paths only: the striped
/// accumulation reorders sums relative to a plain loop.
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] = dot_striped(arow, brow);
        }
    }
    c
}

/// Dot product over four independent accumulator lanes so the loop
/// vectorizes; summation order is fixed but differs from a serial fold.
pub(crate) fn dot_striped(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (xa, xb) = (&a[i * 4..(i + 1) * 4], &b[i * 4..(i + 1) * 4]);
        acc[0] += xa[0] * xb[0];
        acc[1] += xa[1] * xb[1];
        acc[2] += xa[2] * xb[2];
        acc[3] += xa[3] * xb[3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// C[k,n] = A[m,k]ᵀ · B[m,n] (A passed untransposed).
pub(crate) fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn transpose2(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Backward of row-wise softmax: dx = y ⊙ (g − Σ g·y) per row.
pub(crate) fn softmax_rows_backward(y: &[f64], g: &[f64], m: usize, n: usize, dx: &mut [f64]) {
    for i in 0..m {
        let yr = &y[i * n..(i + 1) * n];
        let gr = &g[i * n..(i + 1) * n];
        let s = dot(yr, gr);
        for j in 0..n {
            dx[i * n + j] += yr[j] * (gr[j] - s);
        }
    }
}
