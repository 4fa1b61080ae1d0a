//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Tape`] is built fresh for every forward pass. Operations append nodes
//! (values are computed eagerly), [`Tape::backward`] walks the nodes in
//! reverse and accumulates gradients into every node that needs them.
//! Parameters are bound as named leaves so their gradients can be routed
//! back to the model after the walk.

use crate::error::{Error, Result};
use crate::kernels::{self, LstmSaved};
use crate::tensor::{self, Parameter, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Transpose(Var),
    /// `[m,n] + [n]`, the bias row added to every row.
    AddRows(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    BnTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        mean: Vec<f64>,
        std: Vec<f64>,
    },
    BnEval {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        mean: Vec<f64>,
        std: Vec<f64>,
    },
    LeakyRelu {
        x: Var,
        alpha: f64,
    },
    SoftmaxRows(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Select0 {
        x: Var,
        index: usize,
    },
    Stack0 {
        parts: Vec<Var>,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Reshape(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Lstm {
        x: Var,
        wx: [Var; 4],
        wh: [Var; 4],
        b: [Var; 4],
        t_len: usize,
        d: usize,
        h: usize,
        saved: LstmSaved,
    },
    LstmBatched {
        x: Var,
        wx: [Var; 4],
        wh: [Var; 4],
        b: [Var; 4],
        n: usize,
        t_len: usize,
        d: usize,
        h: usize,
        saved: kernels::LstmBatchSaved,
    },
    /// Swap the last two axes of a rank-3 tensor.
    Transpose12(Var),
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
    MseLoss(Var, Var),
    SumAll(Var),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// Log-probabilities are clamped at this floor inside the cross-entropy
/// loss so a confidently wrong prediction cannot produce an infinite loss.
pub const CROSS_ENTROPY_CLAMP: f64 = 1e-12;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<(String, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that does not require a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Leaf that accumulates a gradient (used by the checker and tests).
    pub fn grad_leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Bind a model parameter as a gradient leaf; its gradient is retrieved
    /// by name after [`Tape::backward`].
    pub fn param(&mut self, p: &Parameter) -> Var {
        let v = self.push(p.value.clone(), true, Op::Leaf);
        self.bound.push((p.name.clone(), v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a node, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Gradients of all bound parameters, in bind order.
    pub fn take_param_grads(&mut self) -> Vec<(String, Tensor)> {
        let bound = std::mem::take(&mut self.bound);
        bound
            .into_iter()
            .map(|(name, v)| {
                let shape = self.nodes[v.0].value.shape().to_vec();
                let g = self.nodes[v.0]
                    .grad
                    .take()
                    .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.numel()]);
                (name, Tensor::new(shape, g).expect("grad shape"))
            })
            .collect()
    }

    // ── elementwise and linear algebra ──────────────────────────────

    fn zip_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_shapes("add", a, b)?;
        let value = self.value(a).add(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_shapes("sub", a, b)?;
        let value = self.value(a).sub(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_shapes("mul", a, b)?;
        let value = self.value(a).mul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let needs = self.needs(a);
        self.push(value, needs, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transposed()?;
        let needs = self.needs(a);
        Ok(self.push(value, needs, Op::Transpose(a)))
    }

    /// Add a `[n]` bias row to every row of a `[m,n]` matrix.
    pub fn add_rows(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("add_rows")?;
        if self.shape(bias) != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_rows",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (v, &bv) in data[i * n..(i + 1) * n].iter_mut().zip(self.value(bias).data()) {
                *v += bv;
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(Tensor::new(vec![m, n], data)?, needs, Op::AddRows(a, bias)))
    }

    // ── structured layers ───────────────────────────────────────────

    /// Same-padded stride-1 1-D convolution over a `[N,C_in,L]` batch.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, c_in, l) = self.value(x).dims3("conv1d")?;
        let (c_out, wc_in, k) = self.value(w).dims3("conv1d")?;
        if wc_in != c_in {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(w).to_vec(),
            });
        }
        if self.shape(b) != [c_out] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: self.shape(w).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; n * c_out * l];
        kernels::conv1d_fwd(
            self.value(x).data(),
            n,
            c_in,
            l,
            self.value(w).data(),
            c_out,
            k,
            self.value(b).data(),
            &mut out,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![n, c_out, l], out)?,
            needs,
            Op::Conv1d { x, w, b },
        ))
    }

    /// Train-mode batch normalization over the N×L axis of a `[N,C,L]`
    /// batch. Returns the node plus the batch mean and std so the caller can
    /// update running statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (n, c, l) = self.value(x).dims3("batchnorm")?;
        if n * l < 2 {
            return Err(Error::DegenerateBatch { count: n * l });
        }
        let (mean, std) = kernels::bn_batch_stats(self.value(x).data(), n, c, l);
        let mut out = vec![0.0; n * c * l];
        kernels::bn_affine_fwd(
            self.value(x).data(),
            n,
            c,
            l,
            self.value(gamma).data(),
            self.value(beta).data(),
            &mean,
            &std,
            eps,
            &mut out,
        );
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = self.push(
            Tensor::new(vec![n, c, l], out)?,
            needs,
            Op::BnTrain {
                x,
                gamma,
                beta,
                eps,
                mean: mean.clone(),
                std: std.clone(),
            },
        );
        Ok((v, mean, std))
    }

    /// Eval-mode batch normalization with fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        running_mean: &[f64],
        running_std: &[f64],
    ) -> Result<Var> {
        let (n, c, l) = self.value(x).dims3("batchnorm")?;
        let mut out = vec![0.0; n * c * l];
        kernels::bn_affine_fwd(
            self.value(x).data(),
            n,
            c,
            l,
            self.value(gamma).data(),
            self.value(beta).data(),
            running_mean,
            running_std,
            eps,
            &mut out,
        );
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Tensor::new(vec![n, c, l], out)?,
            needs,
            Op::BnEval {
                x,
                gamma,
                beta,
                eps,
                mean: running_mean.to_vec(),
                std: running_std.to_vec(),
            },
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        let value = self
            .value(x)
            .map(|v| if v >= 0.0 { v } else { alpha * v });
        let needs = self.needs(x);
        self.push(value, needs, Op::LeakyRelu { x, alpha })
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).softmax_rows()?;
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::SoftmaxRows(x)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let value = tensor::concat(&tensors, axis)?;
        let needs = parts.iter().any(|&v| self.needs(v));
        Ok(self.push(
            value,
            needs,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Index along axis 0: `[N, ...] -> [...]`.
    pub fn select0(&mut self, x: Var, index: usize) -> Result<Var> {
        let shape = self.shape(x);
        if shape.is_empty() || index >= shape[0] {
            return Err(Error::invalid(
                "select0",
                format!("index {index} out of range for shape {shape:?}"),
            ));
        }
        let inner: usize = shape[1..].iter().product();
        let sub_shape = shape[1..].to_vec();
        let data = self.value(x).data()[index * inner..(index + 1) * inner].to_vec();
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(sub_shape, data)?, needs, Op::Select0 { x, index }))
    }

    /// Stack equal-shape tensors along a new leading axis.
    pub fn stack0(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("stack0", "empty part list"))?;
        let sub = self.shape(first).to_vec();
        let inner: usize = sub.iter().product();
        let mut data = Vec::with_capacity(parts.len() * inner);
        for &p in parts {
            if self.shape(p) != sub {
                return Err(Error::ShapeMismatch {
                    op: "stack0",
                    lhs: sub,
                    rhs: self.shape(p).to_vec(),
                });
            }
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&sub);
        let needs = parts.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::new(shape, data)?,
            needs,
            Op::Stack0 {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = self.value(x).reduce_mean(axis)?;
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::MeanAxis { x, axis }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::Reshape(x)))
    }

    /// Apply a precomputed dropout mask (entries are either `0` or the
    /// inverted-dropout survivor scale).
    pub fn dropout_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::invalid("dropout", "mask length mismatch"));
        }
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::Dropout { x, mask }))
    }

    /// Full LSTM recurrence over a `[T,D]` sequence with zero initial state;
    /// the output stacks every hidden state to `[T,H]`. Weight order is
    /// update/forget/output/candidate.
    pub fn lstm(&mut self, x: Var, wx: [Var; 4], wh: [Var; 4], b: [Var; 4]) -> Result<Var> {
        let (t_len, d) = self.value(x).dims2("lstm")?;
        let (h, wd) = self.value(wx[0]).dims2("lstm")?;
        if wd != d {
            return Err(Error::ShapeMismatch {
                op: "lstm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(wx[0]).to_vec(),
            });
        }
        for g in 0..4 {
            if self.shape(wx[g]) != [h, d] || self.shape(wh[g]) != [h, h] || self.shape(b[g]) != [h]
            {
                return Err(Error::invalid("lstm", "inconsistent gate parameter shapes"));
            }
        }
        let (hidden, saved) = {
            let wx_s: [&[f64]; 4] = std::array::from_fn(|g| self.value(wx[g]).data());
            let wh_s: [&[f64]; 4] = std::array::from_fn(|g| self.value(wh[g]).data());
            let b_s: [&[f64]; 4] = std::array::from_fn(|g| self.value(b[g]).data());
            kernels::lstm_fwd(
                self.value(x).data(),
                t_len,
                d,
                h,
                wx_s,
                wh_s,
                b_s,
                None,
                None,
            )
        };
        let needs = self.needs(x)
            || wx.iter().chain(&wh).chain(&b).any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::new(vec![t_len, h], hidden)?,
            needs,
            Op::Lstm {
                x,
                wx,
                wh,
                b,
                t_len,
                d,
                h,
                saved,
            },
        ))
    }

    /// Batched LSTM over `[N,T,D]` input with zero initial state,
    /// producing `[N,T,H]`. Bit-for-bit equal to running [`Tape::lstm`]
    /// per sample.
    pub fn lstm_batched(&mut self, x: Var, wx: [Var; 4], wh: [Var; 4], b: [Var; 4]) -> Result<Var> {
        let (n, t_len, d) = self.value(x).dims3("lstm")?;
        let (h, wd) = self.value(wx[0]).dims2("lstm")?;
        if wd != d {
            return Err(Error::ShapeMismatch {
                op: "lstm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(wx[0]).to_vec(),
            });
        }
        for g in 0..4 {
            if self.shape(wx[g]) != [h, d] || self.shape(wh[g]) != [h, h] || self.shape(b[g]) != [h]
            {
                return Err(Error::invalid("lstm", "inconsistent gate parameter shapes"));
            }
        }
        let (hidden, saved) = {
            let wx_s: [&[f64]; 4] = std::array::from_fn(|g| self.value(wx[g]).data());
            let wh_s: [&[f64]; 4] = std::array::from_fn(|g| self.value(wh[g]).data());
            let b_s: [&[f64]; 4] = std::array::from_fn(|g| self.value(b[g]).data());
            kernels::lstm_fwd_batched(self.value(x).data(), n, t_len, d, h, wx_s, wh_s, b_s)
        };
        let needs = self.needs(x) || wx.iter().chain(&wh).chain(&b).any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::new(vec![n, t_len, h], hidden)?,
            needs,
            Op::LstmBatched {
                x,
                wx,
                wh,
                b,
                n,
                t_len,
                d,
                h,
                saved,
            },
        ))
    }

    /// Swap the last two axes of a `[A,B,C]` tensor.
    pub fn transpose12(&mut self, x: Var) -> Result<Var> {
        let (a, b, c) = self.value(x).dims3("transpose12")?;
        let mut out = vec![0.0; a * b * c];
        for ai in 0..a {
            let src = &self.value(x).data()[ai * b * c..(ai + 1) * b * c];
            let dst = &mut out[ai * b * c..(ai + 1) * b * c];
            for bi in 0..b {
                for ci in 0..c {
                    dst[ci * b + bi] = src[bi * c + ci];
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![a, c, b], out)?,
            needs,
            Op::Transpose12(x),
        ))
    }

    // ── losses ──────────────────────────────────────────────────────

    /// −(1/N)·Σ log p[i, label_i] with the log argument clamped at
    /// [`CROSS_ENTROPY_CLAMP`]. Labels are given as a one-hot matrix.
    pub fn cross_entropy(&mut self, probs: Var, onehot: &Tensor) -> Result<Var> {
        let (n, k) = self.value(probs).dims2("cross_entropy")?;
        if onehot.shape() != [n, k] {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: self.shape(probs).to_vec(),
                rhs: onehot.shape().to_vec(),
            });
        }
        let labels = onehot_to_labels(onehot)?;
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let p = self.value(probs).data()[i * k + y];
            loss -= p.max(CROSS_ENTROPY_CLAMP).ln();
        }
        loss /= n as f64;
        let needs = self.needs(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            needs,
            Op::CrossEntropy { probs, labels },
        ))
    }

    /// Mean over every element of (a − b)².
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_shapes("mse", a, b)?;
        let n = self.value(a).numel() as f64;
        let loss = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(loss), needs, Op::MseLoss(a, b)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), needs, Op::SumAll(x))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Accumulate gradients of `loss` (a scalar node) into every node that
    /// requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            self.backward_step(i);
        }
        Ok(())
    }

    fn backward_step(&mut self, i: usize) {
        let (head, tail) = self.nodes.split_at_mut(i);
        let node = &mut tail[0];
        if !node.needs_grad {
            node.grad = None;
            return;
        }
        let Some(g) = node.grad.as_deref() else {
            return;
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accum(head, *a, g);
                accum(head, *b, g);
            }
            Op::Sub(a, b) => {
                accum(head, *a, g);
                accum_with(head, *b, g.len(), |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = head[a.0].value.data().to_vec();
                let bv = head[b.0].value.data().to_vec();
                accum_with(head, *a, g.len(), |dst| {
                    for ((d, &gv), &x) in dst.iter_mut().zip(g).zip(&bv) {
                        *d += gv * x;
                    }
                });
                accum_with(head, *b, g.len(), |dst| {
                    for ((d, &gv), &x) in dst.iter_mut().zip(g).zip(&av) {
                        *d += gv * x;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                accum_with(head, *a, g.len(), |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += c * gv;
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (m, k) = (head[a.0].value.shape()[0], head[a.0].value.shape()[1]);
                let n = head[b.0].value.shape()[1];
                if head[a.0].needs_grad {
                    // dA = G · Bᵀ
                    let da = tensor::mm_nt(g, head[b.0].value.data(), m, n, k);
                    accum_vec(head, *a, &da);
                }
                if head[b.0].needs_grad {
                    // dB = Aᵀ · G
                    let db = tensor::mm_tn(head[a.0].value.data(), g, m, k, n);
                    accum_vec(head, *b, &db);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (head[a.0].value.shape()[0], head[a.0].value.shape()[1]);
                // node value is [n, m]; transpose g back to [m, n].
                let gt = tensor::transpose2(g, n, m);
                accum_vec(head, *a, &gt);
            }
            Op::AddRows(a, bias) => {
                let (m, n) = (head[a.0].value.shape()[0], head[a.0].value.shape()[1]);
                accum(head, *a, g);
                accum_with(head, *bias, n, |dst| {
                    for i in 0..m {
                        for (d, &gv) in dst.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Conv1d { x, w, b } => {
                let (n, c_in, l) = {
                    let s = head[x.0].value.shape();
                    (s[0], s[1], s[2])
                };
                let (c_out, k) = {
                    let s = head[w.0].value.shape();
                    (s[0], s[2])
                };
                let xv = head[x.0].value.data().to_vec();
                let wv = head[w.0].value.data().to_vec();
                let mut dx = head[x.0].needs_grad.then(|| vec![0.0; n * c_in * l]);
                let mut dw = head[w.0].needs_grad.then(|| vec![0.0; c_out * c_in * k]);
                let mut db = head[b.0].needs_grad.then(|| vec![0.0; c_out]);
                kernels::conv1d_bwd(
                    &xv,
                    &wv,
                    g,
                    n,
                    c_in,
                    l,
                    c_out,
                    k,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    accum_vec(head, *x, &dx);
                }
                if let Some(dw) = dw {
                    accum_vec(head, *w, &dw);
                }
                if let Some(db) = db {
                    accum_vec(head, *b, &db);
                }
            }
            Op::BnTrain {
                x,
                gamma,
                beta,
                eps,
                mean,
                std,
            } => {
                let (n, c, l) = {
                    let s = head[x.0].value.shape();
                    (s[0], s[1], s[2])
                };
                let xv = head[x.0].value.data().to_vec();
                let gv = head[gamma.0].value.data().to_vec();
                let mut dx = head[x.0].needs_grad.then(|| vec![0.0; n * c * l]);
                let mut dgamma = head[gamma.0].needs_grad.then(|| vec![0.0; c]);
                let mut dbeta = head[beta.0].needs_grad.then(|| vec![0.0; c]);
                kernels::bn_train_bwd(
                    &xv,
                    g,
                    n,
                    c,
                    l,
                    &gv,
                    mean,
                    std,
                    *eps,
                    dx.as_deref_mut(),
                    dgamma.as_deref_mut(),
                    dbeta.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    accum_vec(head, *x, &dx);
                }
                if let Some(dg) = dgamma {
                    accum_vec(head, *gamma, &dg);
                }
                if let Some(db) = dbeta {
                    accum_vec(head, *beta, &db);
                }
            }
            Op::BnEval {
                x,
                gamma,
                beta,
                eps,
                mean,
                std,
            } => {
                let (n, c, l) = {
                    let s = head[x.0].value.shape();
                    (s[0], s[1], s[2])
                };
                let xv = head[x.0].value.data().to_vec();
                let gv = head[gamma.0].value.data().to_vec();
                let mut dx = head[x.0].needs_grad.then(|| vec![0.0; n * c * l]);
                let mut dgamma = head[gamma.0].needs_grad.then(|| vec![0.0; c]);
                let mut dbeta = head[beta.0].needs_grad.then(|| vec![0.0; c]);
                kernels::bn_eval_bwd(
                    &xv,
                    g,
                    n,
                    c,
                    l,
                    &gv,
                    mean,
                    std,
                    *eps,
                    dx.as_deref_mut(),
                    dgamma.as_deref_mut(),
                    dbeta.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    accum_vec(head, *x, &dx);
                }
                if let Some(dg) = dgamma {
                    accum_vec(head, *gamma, &dg);
                }
                if let Some(db) = dbeta {
                    accum_vec(head, *beta, &db);
                }
            }
            Op::LeakyRelu { x, alpha } => {
                let alpha = *alpha;
                let xv = head[x.0].value.data().to_vec();
                accum_with(head, *x, g.len(), |dst| {
                    for ((d, &gv), &v) in dst.iter_mut().zip(g).zip(&xv) {
                        // Subgradient at 0 is taken as 1.
                        *d += gv * if v >= 0.0 { 1.0 } else { alpha };
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let mut dx = vec![0.0; m * n];
                tensor::softmax_rows_backward(node.value.data(), g, m, n, &mut dx);
                accum_vec(head, *x, &dx);
            }
            Op::Concat { parts, axis } => {
                let parts = parts.clone();
                let axis = *axis;
                let out_shape = node.value.shape().to_vec();
                let outer: usize = out_shape[..axis].iter().product();
                let total_inner: usize = out_shape[axis..].iter().product();
                let mut offset = 0;
                for p in parts {
                    let pshape = head[p.0].value.shape().to_vec();
                    let width: usize = pshape[axis..].iter().product();
                    accum_with(head, p, pshape.iter().product(), |dst| {
                        for o in 0..outer {
                            let src = &g[o * total_inner + offset..o * total_inner + offset + width];
                            for (d, &gv) in dst[o * width..(o + 1) * width].iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                    });
                    offset += width;
                }
            }
            Op::Select0 { x, index } => {
                let inner = node.value.numel();
                let index = *index;
                let total = head[x.0].value.numel();
                accum_with(head, *x, total, |dst| {
                    for (d, &gv) in dst[index * inner..(index + 1) * inner].iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            Op::Stack0 { parts } => {
                let parts = parts.clone();
                let inner = if parts.is_empty() {
                    0
                } else {
                    head[parts[0].0].value.numel()
                };
                for (i, p) in parts.into_iter().enumerate() {
                    let seg = &g[i * inner..(i + 1) * inner];
                    accum(head, p, seg);
                }
            }
            Op::MeanAxis { x, axis } => {
                let axis = *axis;
                let xshape = head[x.0].value.shape().to_vec();
                let len = xshape[axis];
                let outer: usize = xshape[..axis].iter().product();
                let inner: usize = xshape[axis + 1..].iter().product();
                let inv = 1.0 / len as f64;
                accum_with(head, *x, outer * len * inner, |dst| {
                    for o in 0..outer {
                        let gseg = &g[o * inner..(o + 1) * inner];
                        for a in 0..len {
                            let base = (o * len + a) * inner;
                            for (d, &gv) in dst[base..base + inner].iter_mut().zip(gseg) {
                                *d += gv * inv;
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                accum(head, *x, g);
            }
            Op::Dropout { x, mask } => {
                let mask = mask.clone();
                accum_with(head, *x, g.len(), |dst| {
                    for ((d, &gv), &m) in dst.iter_mut().zip(g).zip(&mask) {
                        *d += gv * m;
                    }
                });
            }
            Op::Lstm {
                x,
                wx,
                wh,
                b,
                t_len,
                d,
                h,
                saved,
            } => {
                let (x, wx, wh, b) = (*x, *wx, *wh, *b);
                let (t_len, d, h) = (*t_len, *d, *h);
                let xv = head[x.0].value.data().to_vec();
                let wx_v: Vec<Vec<f64>> =
                    wx.iter().map(|v| head[v.0].value.data().to_vec()).collect();
                let wh_v: Vec<Vec<f64>> =
                    wh.iter().map(|v| head[v.0].value.data().to_vec()).collect();
                let wx_s: [&[f64]; 4] = std::array::from_fn(|i| wx_v[i].as_slice());
                let wh_s: [&[f64]; 4] = std::array::from_fn(|i| wh_v[i].as_slice());
                let grads = kernels::lstm_bwd(
                    &xv,
                    t_len,
                    d,
                    h,
                    wx_s,
                    wh_s,
                    node.value.data(),
                    saved,
                    g,
                );
                accum_vec(head, x, &grads.dx);
                for gate in 0..4 {
                    accum_vec(head, wx[gate], &grads.dwx[gate]);
                    accum_vec(head, wh[gate], &grads.dwh[gate]);
                    accum_vec(head, b[gate], &grads.db[gate]);
                }
            }
            Op::LstmBatched {
                x,
                wx,
                wh,
                b,
                n,
                t_len,
                d,
                h,
                saved,
            } => {
                let (x, wx, wh, b) = (*x, *wx, *wh, *b);
                let (n, t_len, d, h) = (*n, *t_len, *d, *h);
                let xv = head[x.0].value.data().to_vec();
                let wx_v: Vec<Vec<f64>> =
                    wx.iter().map(|v| head[v.0].value.data().to_vec()).collect();
                let wh_v: Vec<Vec<f64>> =
                    wh.iter().map(|v| head[v.0].value.data().to_vec()).collect();
                let wx_s: [&[f64]; 4] = std::array::from_fn(|i| wx_v[i].as_slice());
                let wh_s: [&[f64]; 4] = std::array::from_fn(|i| wh_v[i].as_slice());
                let grads =
                    kernels::lstm_bwd_batched(&xv, n, t_len, d, h, wx_s, wh_s, saved, g);
                accum_vec(head, x, &grads.dx);
                for gate in 0..4 {
                    accum_vec(head, wx[gate], &grads.dwx[gate]);
                    accum_vec(head, wh[gate], &grads.dwh[gate]);
                    accum_vec(head, b[gate], &grads.db[gate]);
                }
            }
            Op::Transpose12(x) => {
                let (a, c, b) = {
                    let s = node.value.shape();
                    (s[0], s[1], s[2])
                };
                // g is [a, c, b]; transpose each sample back to [b, c].
                let total = a * b * c;
                accum_with(head, *x, total, |dst| {
                    for ai in 0..a {
                        let gsrc = &g[ai * b * c..(ai + 1) * b * c];
                        let d2 = &mut dst[ai * b * c..(ai + 1) * b * c];
                        for ci in 0..c {
                            for bi in 0..b {
                                d2[bi * c + ci] += gsrc[ci * b + bi];
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy { probs, labels } => {
                let gscale = g[0];
                let labels = labels.clone();
                let k = head[probs.0].value.shape()[1];
                let n = labels.len() as f64;
                let pv = head[probs.0].value.data().to_vec();
                accum_with(head, *probs, pv.len(), |dst| {
                    for (i, &y) in labels.iter().enumerate() {
                        let p = pv[i * k + y];
                        if p > CROSS_ENTROPY_CLAMP {
                            dst[i * k + y] -= gscale / (n * p);
                        }
                    }
                });
            }
            Op::MseLoss(a, b) => {
                let gscale = g[0];
                let av = head[a.0].value.data().to_vec();
                let bv = head[b.0].value.data().to_vec();
                let scale = 2.0 * gscale / av.len() as f64;
                accum_with(head, *a, av.len(), |dst| {
                    for ((d, &x), &y) in dst.iter_mut().zip(&av).zip(&bv) {
                        *d += scale * (x - y);
                    }
                });
                accum_with(head, *b, av.len(), |dst| {
                    for ((d, &x), &y) in dst.iter_mut().zip(&av).zip(&bv) {
                        *d -= scale * (x - y);
                    }
                });
            }
            Op::SumAll(x) => {
                let gscale = g[0];
                let total = head[x.0].value.numel();
                accum_with(head, *x, total, |dst| {
                    for d in dst.iter_mut() {
                        *d += gscale;
                    }
                });
            }
        }
    }
}

/// Convert a one-hot `[N,K]` matrix to label indices, rejecting rows that
/// are not exactly one-hot.
pub(crate) fn onehot_to_labels(onehot: &Tensor) -> Result<Vec<usize>> {
    let (n, k) = onehot.dims2("cross_entropy")?;
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let row = &onehot.data()[i * k..(i + 1) * k];
        let mut hot = None;
        for (j, &v) in row.iter().enumerate() {
            if v == 1.0 {
                if hot.is_some() {
                    return Err(Error::invalid(
                        "cross_entropy",
                        format!("malformed one-hot row {i}: multiple ones"),
                    ));
                }
                hot = Some(j);
            } else if v != 0.0 {
                return Err(Error::invalid(
                    "cross_entropy",
                    format!("malformed one-hot row {i}: entry {v} is neither 0 nor 1"),
                ));
            }
        }
        labels.push(hot.ok_or_else(|| {
            Error::invalid("cross_entropy", format!("malformed one-hot row {i}: no one"))
        })?);
    }
    Ok(labels)
}

fn accum(head: &mut [Node], v: Var, g: &[f64]) {
    if !head[v.0].needs_grad {
        return;
    }
    let numel = head[v.0].value.numel();
    let dst = head[v.0].grad.get_or_insert_with(|| vec![0.0; numel]);
    for (d, &gv) in dst.iter_mut().zip(g) {
        *d += gv;
    }
}

fn accum_vec(head: &mut [Node], v: Var, g: &[f64]) {
    accum(head, v, g);
}

/// Accumulate into `v`'s gradient via a closure over the buffer; skipped
/// entirely when `v` does not need a gradient.
fn accum_with(head: &mut [Node], v: Var, numel: usize, f: impl FnOnce(&mut [f64])) {
    if !head[v.0].needs_grad {
        return;
    }
    let dst = head[v.0].grad.get_or_insert_with(|| vec![0.0; numel]);
    f(dst);
}
