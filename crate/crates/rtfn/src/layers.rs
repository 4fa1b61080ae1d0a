//! Feed-forward building blocks: convolution block, batch normalization,
//! LeakyReLU, dense layers, dropout, and the four-branch multi-scale
//! convolution layer.

use crate::error::{Error, Result};
use crate::kernels;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Parameter, Tensor};

/// Whether a pass updates statistics and applies dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Kernel widths of the four parallel branches in a multi-head layer.
pub const MULTI_HEAD_KERNELS: [usize; 4] = [5, 8, 11, 17];

/// Negative-slope coefficient shared by every activation in the network.
pub const LEAKY_ALPHA: f64 = 0.1;

// ── batch normalization ─────────────────────────────────────────────────

/// Per-channel batch normalization over the N×L axis of `[N,C,L]` input.
///
/// Train mode normalizes with batch statistics (`(x−μ)/(δ+ε)`, δ the
/// population standard deviation) and folds them into running buffers with
/// momentum `decay`; eval mode applies the running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Tensor,
    pub running_std: Tensor,
    pub decay: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(prefix: &str, channels: usize, decay: f64) -> Self {
        Self {
            gamma: Parameter::new(format!("{prefix}.gamma"), Tensor::full(&[channels], 1.0), false),
            beta: Parameter::new(format!("{prefix}.beta"), Tensor::zeros(&[channels]), false),
            running_mean: Tensor::zeros(&[channels]),
            running_std: Tensor::full(&[channels], 1.0),
            decay,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let gamma = tape.param(&self.gamma);
        let beta = tape.param(&self.beta);
        match mode {
            Mode::Train => {
                let (out, mean, std) = tape.batchnorm_train(x, gamma, beta, self.eps)?;
                self.update_running(&mean, &std);
                Ok(out)
            }
            Mode::Eval => tape.batchnorm_eval(
                x,
                gamma,
                beta,
                self.eps,
                self.running_mean.data(),
                self.running_std.data(),
            ),
        }
    }

    fn update_running(&mut self, mean: &[f64], std: &[f64]) {
        let d = self.decay;
        for (r, &m) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *r = d * *r + (1.0 - d) * m;
        }
        for (r, &s) in self.running_std.data_mut().iter_mut().zip(std) {
            *r = d * *r + (1.0 - d) * s;
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Standalone batch-normalization forward on a `[N,C,L]` tensor.
pub fn batchnorm_forward(x: &Tensor, bn: &mut BatchNorm1d, mode: Mode) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = bn.forward(&mut tape, xv, mode)?;
    Ok(tape.value(out).clone())
}

// ── convolution ─────────────────────────────────────────────────────────

/// Conv1D block: same-padded stride-1 convolution, batch normalization,
/// LeakyReLU.
#[derive(Debug, Clone)]
pub struct Conv1dBlock {
    pub weight: Parameter,
    pub bias: Parameter,
    pub bn: BatchNorm1d,
    pub alpha: f64,
}

impl Conv1dBlock {
    pub fn new(
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        alpha: f64,
        bn_decay: f64,
        rng: &mut Rng,
    ) -> Self {
        assert!(kernel >= 1, "kernel size must be at least 1");
        Self {
            weight: Parameter::uniform_init(
                format!("{prefix}.conv.weight"),
                &[c_out, c_in, kernel],
                c_in * kernel,
                true,
                rng,
            ),
            bias: Parameter::new(format!("{prefix}.conv.bias"), Tensor::zeros(&[c_out]), false),
            bn: BatchNorm1d::new(&format!("{prefix}.bn"), c_out, bn_decay),
            alpha,
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let y = tape.conv1d(x, w, b)?;
        let y = self.bn.forward(tape, y, mode)?;
        Ok(tape.leaky_relu(y, self.alpha))
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut p = vec![&self.weight, &self.bias];
        p.extend(self.bn.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = vec![&mut self.weight, &mut self.bias];
        p.extend(self.bn.params_mut());
        p
    }
}

/// Four parallel [`Conv1dBlock`]s with kernel sizes 5, 8, 11, 17, their
/// outputs concatenated on the channel axis in that order.
#[derive(Debug, Clone)]
pub struct MultiHeadConvLayer {
    pub branches: Vec<Conv1dBlock>,
}

impl MultiHeadConvLayer {
    pub fn new(
        prefix: &str,
        c_in: usize,
        c_out_total: usize,
        alpha: f64,
        bn_decay: f64,
        rng: &mut Rng,
    ) -> Self {
        assert!(
            c_out_total % MULTI_HEAD_KERNELS.len() == 0,
            "multi-head channel count must split evenly across branches"
        );
        let per_branch = c_out_total / MULTI_HEAD_KERNELS.len();
        let branches = MULTI_HEAD_KERNELS
            .iter()
            .map(|&k| {
                Conv1dBlock::new(
                    &format!("{prefix}.k{k}"),
                    c_in,
                    per_branch,
                    k,
                    alpha,
                    bn_decay,
                    rng,
                )
            })
            .collect();
        Self { branches }
    }

    pub fn out_channels(&self) -> usize {
        self.branches.iter().map(|b| b.out_channels()).sum()
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in &mut self.branches {
            outs.push(branch.forward(tape, x, mode)?);
        }
        tape.concat(&outs, 1)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.branches.iter().flat_map(|b| b.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.branches
            .iter_mut()
            .flat_map(|b| b.params_mut())
            .collect()
    }
}

/// Standalone same-padded convolution. Accepts `[C_in,L]` or `[N,C_in,L]`
/// input; the output keeps the input's rank.
pub fn conv1d(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batched, n, c_in, l) = match x.shape() {
        [c, l] => (false, 1, *c, *l),
        [n, c, l] => (true, *n, *c, *l),
        _ => {
            return Err(Error::invalid(
                "conv1d",
                format!("expected rank-2 or rank-3 input, got {:?}", x.shape()),
            ))
        }
    };
    let (c_out, wc_in, k) = w.dims3("conv1d")?;
    if wc_in != c_in {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    if b.shape() != [c_out] {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: w.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; n * c_out * l];
    kernels::conv1d_fwd(x.data(), n, c_in, l, w.data(), c_out, k, b.data(), &mut out);
    if batched {
        Tensor::new(vec![n, c_out, l], out)
    } else {
        Tensor::new(vec![c_out, l], out)
    }
}

/// Elementwise `x if x ≥ 0 else α·x`.
pub fn leaky_relu(x: &Tensor, alpha: f64) -> Tensor {
    x.map(|v| if v >= 0.0 { v } else { alpha * v })
}

// ── dense ───────────────────────────────────────────────────────────────

/// Fully-connected layer with weight `[out,in]` and bias `[out]`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl DenseLayer {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Parameter::uniform_init(
                format!("{prefix}.weight"),
                &[out_dim, in_dim],
                in_dim,
                true,
                rng,
            ),
            bias: Parameter::new(format!("{prefix}.bias"), Tensor::zeros(&[out_dim]), false),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    /// Batched application to `[N,in]` rows.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let wt = tape.transpose(w)?;
        let y = tape.matmul(x, wt)?;
        tape.add_rows(y, b)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Standalone dense application: `weight·x + bias` for a `[in]` vector.
pub fn dense(x: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    if x.shape() != [layer.in_dim()] {
        return Err(Error::ShapeMismatch {
            op: "dense",
            lhs: layer.weight.value.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    let (out_dim, in_dim) = layer.weight.value.dims2("dense")?;
    let mut out = Vec::with_capacity(out_dim);
    for r in 0..out_dim {
        let row = &layer.weight.value.data()[r * in_dim..(r + 1) * in_dim];
        out.push(crate::tensor::dot(row, x.data()) + layer.bias.value.data()[r]);
    }
    Ok(Tensor::from_vec(out))
}

// ── dropout ─────────────────────────────────────────────────────────────

/// Inverted-dropout mask: entries are 0 with probability `rate`, otherwise
/// `1/(1−rate)`, so the expected value of masked input equals the input.
pub(crate) fn dropout_mask(numel: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    if rate == 0.0 {
        return vec![1.0; numel];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..numel)
        .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
        .collect()
}

/// Standalone inverted dropout. Train mode zeroes each element with
/// probability `rate` and scales survivors; eval mode is the identity.
pub fn dropout(x: &Tensor, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(
            "dropout",
            format!("rate {rate} outside [0, 1)"),
        ));
    }
    match mode {
        Mode::Eval => Ok(x.clone()),
        Mode::Train => {
            let mask = dropout_mask(x.numel(), rate, rng);
            let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            Tensor::new(x.shape().to_vec(), data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-summation convolution over an explicitly padded buffer;
    /// deliberately written differently from the production kernel.
    pub(crate) fn conv1d_oracle(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let (c_in, l) = (x.shape()[0], x.shape()[1]);
        let (c_out, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let pad_left = (k - 1) / 2;
        let padded_len = l + k - 1;
        let mut xpad = vec![0.0; c_in * padded_len];
        for ci in 0..c_in {
            for t in 0..l {
                xpad[ci * padded_len + pad_left + t] = x.data()[ci * l + t];
            }
        }
        let mut out = vec![0.0; c_out * l];
        for co in 0..c_out {
            for t in 0..l {
                let mut acc = b.data()[co];
                for ci in 0..c_in {
                    for j in 0..k {
                        acc += w.data()[(co * c_in + ci) * k + j] * xpad[ci * padded_len + t + j];
                    }
                }
                out[co * l + t] = acc;
            }
        }
        Tensor::new(vec![c_out, l], out).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::new(vec![1, 2], vec![5.0, 7.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::from_vec(vec![0.0]);
        assert_eq!(conv1d(&x, &w, &b).unwrap().data(), &[5.0, 7.0]);
    }

    #[test]
    fn conv_all_ones_kernel_hand_case() {
        // x = [0,1,0], k = 3 all ones, zero padding: every tap sees the 1.
        let x = Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(vec![0.0]);
        assert_eq!(conv1d(&x, &w, &b).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn conv_matches_direct_summation_oracle() {
        let mut rng = Rng::new(31);
        for (c_in, c_out, l, k) in [
            (1, 1, 4, 1),
            (2, 3, 8, 3),
            (3, 2, 16, 5),
            (4, 4, 10, 8),
            (1, 2, 5, 8),
        ] {
            let x = Tensor::rand_uniform(&[c_in, l], -1.0, 1.0, &mut rng);
            let w = Tensor::rand_uniform(&[c_out, c_in, k], -1.0, 1.0, &mut rng);
            let b = Tensor::rand_uniform(&[c_out], -1.0, 1.0, &mut rng);
            let got = conv1d(&x, &w, &b).unwrap();
            let want = conv1d_oracle(&x, &w, &b);
            for (g, o) in got.data().iter().zip(want.data()) {
                assert!((g - o).abs() < 1e-12, "{g} vs {o}");
            }
        }
    }

    #[test]
    fn conv_even_kernel_preserves_length() {
        // k = 8: 3 zeros left, 4 right.
        let x = Tensor::rand_uniform(&[2, 9], -1.0, 1.0, &mut Rng::new(3));
        let w = Tensor::rand_uniform(&[3, 2, 8], -1.0, 1.0, &mut Rng::new(4));
        let b = Tensor::zeros(&[3]);
        assert_eq!(conv1d(&x, &w, &b).unwrap().shape(), &[3, 9]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::zeros(&[2, 4]);
        let w = Tensor::zeros(&[1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        assert!(matches!(
            conv1d(&x, &w, &b),
            Err(Error::ShapeMismatch { op: "conv1d", .. })
        ));
    }

    #[test]
    fn bn_constant_channel_maps_to_beta() {
        let mut bn = BatchNorm1d::new("bn", 1, 0.9);
        let x = Tensor::full(&[2, 1, 3], 42.0);
        let y = batchnorm_forward(&x, &mut bn, Mode::Train).unwrap();
        for &v in y.data() {
            assert!(v.abs() < 1e-9, "constant channel should normalize to β, got {v}");
        }
    }

    #[test]
    fn bn_plus_minus_one_is_fixed_point_as_eps_vanishes() {
        // Batch is {−1, +1}: μ = 0, δ = 1, so output ≈ input.
        let mut bn = BatchNorm1d::new("bn", 1, 0.9);
        bn.eps = 1e-12;
        let x = Tensor::new(vec![2, 1, 1], vec![-1.0, 1.0]).unwrap();
        let y = batchnorm_forward(&x, &mut bn, Mode::Train).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9);
        assert!((y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bn_affine_contract_mean_beta_std_gamma() {
        let mut rng = Rng::new(17);
        let mut bn = BatchNorm1d::new("bn", 2, 0.9);
        bn.gamma.value = Tensor::full(&[2], 2.0);
        bn.beta.value = Tensor::full(&[2], 3.0);
        let x = Tensor::rand_uniform(&[4, 2, 8], -5.0, 5.0, &mut rng);
        let y = batchnorm_forward(&x, &mut bn, Mode::Train).unwrap();
        let (n, c, l) = (4, 2, 8);
        for ch in 0..c {
            let mut vals = Vec::new();
            for ni in 0..n {
                vals.extend_from_slice(&y.data()[(ni * c + ch) * l..(ni * c + ch + 1) * l]);
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd =
                (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!((m - 3.0).abs() < 1e-6, "mean {m}");
            // std is γ·δ/(δ+ε) ≈ γ.
            assert!((sd - 2.0).abs() < 1e-4, "std {sd}");
        }
    }

    #[test]
    fn bn_train_rejects_single_value_batches() {
        let mut bn = BatchNorm1d::new("bn", 1, 0.9);
        let x = Tensor::zeros(&[1, 1, 1]);
        assert!(matches!(
            batchnorm_forward(&x, &mut bn, Mode::Train),
            Err(Error::DegenerateBatch { .. })
        ));
        // Eval mode has no batch-statistics requirement.
        assert!(batchnorm_forward(&x, &mut bn, Mode::Eval).is_ok());
    }

    #[test]
    fn bn_running_std_stays_positive() {
        let mut rng = Rng::new(23);
        let mut bn = BatchNorm1d::new("bn", 3, 0.9);
        for _ in 0..20 {
            let x = Tensor::rand_uniform(&[2, 3, 4], -1.0, 1.0, &mut rng);
            batchnorm_forward(&x, &mut bn, Mode::Train).unwrap();
            assert!(bn.running_std.data().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn leaky_relu_cases() {
        let x = Tensor::from_vec(vec![-2.0, 3.0, 0.0]);
        let y = leaky_relu(&x, 0.1);
        assert_eq!(y.data(), &[-0.2, 3.0, 0.0]);
    }

    #[test]
    fn dense_identity_and_bias() {
        let mut rng = Rng::new(2);
        let mut layer = DenseLayer::new("d", 3, 3, &mut rng);
        layer.weight.value =
            Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        layer.bias.value = Tensor::zeros(&[3]);
        let x = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(dense(&x, &layer).unwrap().data(), x.data());

        layer.weight.value = Tensor::zeros(&[3, 3]);
        layer.bias.value = Tensor::full(&[3], 7.0);
        assert_eq!(dense(&x, &layer).unwrap().data(), &[7.0, 7.0, 7.0]);
    }

    #[test]
    fn dense_matches_matmul_oracle() {
        let mut rng = Rng::new(12);
        let layer = DenseLayer::new("d", 5, 4, &mut rng);
        let x = Tensor::rand_uniform(&[5], -1.0, 1.0, &mut rng);
        let got = dense(&x, &layer).unwrap();
        let want = layer
            .weight
            .value
            .matmul(&x.reshape(vec![5, 1]).unwrap())
            .unwrap();
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_dimension_mismatch() {
        let mut rng = Rng::new(1);
        let layer = DenseLayer::new("d", 3, 2, &mut rng);
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(dense(&x, &layer).is_err());
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = Rng::new(5);
        let x = Tensor::rand_uniform(&[100], -1.0, 1.0, &mut rng);
        let y = dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_rate_zero_is_identity_in_train() {
        let mut rng = Rng::new(5);
        let x = Tensor::rand_uniform(&[100], -1.0, 1.0, &mut rng);
        let y = dropout(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut rng = Rng::new(5);
        let x = Tensor::zeros(&[4]);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = Rng::new(77);
        let x = Tensor::full(&[100_000], 1.0);
        let y = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = y.data().iter().sum::<f64>() / y.numel() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn multi_head_output_channels_and_length() {
        let mut rng = Rng::new(9);
        let mut mh = MultiHeadConvLayer::new("mh", 8, 8, 0.1, 0.9, &mut rng);
        assert_eq!(mh.out_channels(), 8);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::rand_uniform(&[2, 8, 13], -1.0, 1.0, &mut rng));
        let y = mh.forward(&mut tape, x, Mode::Train).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 8, 13]);
    }

    #[test]
    fn multi_head_zero_everything_gives_zero_output() {
        let mut rng = Rng::new(9);
        let mut mh = MultiHeadConvLayer::new("mh", 4, 4, 0.1, 0.9, &mut rng);
        for b in &mut mh.branches {
            b.weight.value = Tensor::zeros(b.weight.value.shape());
            // biases and β already zero
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 4, 6]));
        let y = mh.forward(&mut tape, x, Mode::Train).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }
}
