//! Forward and backward kernels for the structured layers.
//!
//! These operate on raw slices so the same code backs both the public
//! layer functions and the autodiff tape. Accumulation order is fixed and
//! serial per output element, so results do not depend on `RTFN_THREADS`.

/// "Same" padding split for kernel width `k`: `k-1` zeros total,
/// `floor((k-1)/2)` on the left.
pub(crate) fn same_pad_left(k: usize) -> usize {
    (k - 1) / 2
}

/// out[n,co,t] = b[co] + Σ_{ci,j} w[co,ci,j] · x[n,ci,t+j-pad_left],
/// out-of-range taps read zero. Output length equals input length.
pub(crate) fn conv1d_fwd(
    x: &[f64],
    n: usize,
    c_in: usize,
    l: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    b: &[f64],
    out: &mut [f64],
) {
    let pl = same_pad_left(k) as isize;
    let threads = crate::threads();
    let one_sample = |ni: usize, os: &mut [f64]| {
        let xs = &x[ni * c_in * l..(ni + 1) * c_in * l];
        for co in 0..c_out {
            let orow = &mut os[co * l..(co + 1) * l];
            orow.fill(b[co]);
            for ci in 0..c_in {
                let xrow = &xs[ci * l..(ci + 1) * l];
                let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                for (j, &wv) in wrow.iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    let shift = j as isize - pl;
                    let t0 = (-shift).max(0) as usize;
                    let t1 = (l as isize - shift).min(l as isize) as usize;
                    if t0 >= t1 {
                        continue;
                    }
                    let xseg = &xrow[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                    for (ov, &xv) in orow[t0..t1].iter_mut().zip(xseg) {
                        *ov += wv * xv;
                    }
                }
            }
        }
    };
    if threads > 1 && n > 1 {
        use rayon::prelude::*;
        out.par_chunks_mut(c_out * l)
            .enumerate()
            .for_each(|(ni, os)| one_sample(ni, os));
    } else {
        for (ni, os) in out.chunks_mut(c_out * l).enumerate() {
            one_sample(ni, os);
        }
    }
}

/// Gradients of `conv1d_fwd`. Each output buffer is accumulated into.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_bwd(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    n: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let pl = same_pad_left(k) as isize;
    if let Some(db) = db {
        for ni in 0..n {
            for co in 0..c_out {
                let grow = &gy[(ni * c_out + co) * l..(ni * c_out + co + 1) * l];
                db[co] += grow.iter().sum::<f64>();
            }
        }
    }
    if let Some(dw) = dw {
        // dw[co,ci,j] = Σ_{n,t} gy[n,co,t] · x[n,ci,t+j-pl]
        for ni in 0..n {
            for co in 0..c_out {
                let grow = &gy[(ni * c_out + co) * l..(ni * c_out + co + 1) * l];
                for ci in 0..c_in {
                    let xrow = &x[(ni * c_in + ci) * l..(ni * c_in + ci + 1) * l];
                    let wrow = &mut dw[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                    for (j, dwv) in wrow.iter_mut().enumerate() {
                        let shift = j as isize - pl;
                        let t0 = (-shift).max(0) as usize;
                        let t1 = (l as isize - shift).min(l as isize) as usize;
                        if t0 >= t1 {
                            continue;
                        }
                        let xseg =
                            &xrow[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                        *dwv += crate::tensor::dot_striped(&grow[t0..t1], xseg);
                    }
                }
            }
        }
    }
    if let Some(dx) = dx {
        // dx[n,ci,s] = Σ_{co,j} w[co,ci,j] · gy[n,co,s-j+pl]
        for ni in 0..n {
            for co in 0..c_out {
                let grow = &gy[(ni * c_out + co) * l..(ni * c_out + co + 1) * l];
                for ci in 0..c_in {
                    let xrow = &mut dx[(ni * c_in + ci) * l..(ni * c_in + ci + 1) * l];
                    let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                    for (j, &wv) in wrow.iter().enumerate() {
                        if wv == 0.0 {
                            continue;
                        }
                        let shift = j as isize - pl;
                        // s − shift ∈ [0, l) ⇒ s ∈ [shift, l+shift)
                        let s0 = shift.max(0) as usize;
                        let s1 = (l as isize + shift).min(l as isize) as usize;
                        if s0 >= s1 {
                            continue;
                        }
                        let gseg =
                            &grow[(s0 as isize - shift) as usize..(s1 as isize - shift) as usize];
                        for (xv, &gv) in xrow[s0..s1].iter_mut().zip(gseg) {
                            *xv += wv * gv;
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel batch statistics over the N×L axis: mean and population
/// standard deviation.
pub(crate) fn bn_batch_stats(x: &[f64], n: usize, c: usize, l: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * l) as f64;
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for ni in 0..n {
            let row = &x[(ni * c + ch) * l..(ni * c + ch + 1) * l];
            sum += row.iter().sum::<f64>();
        }
        let mu = sum / m;
        let mut sq = 0.0;
        for ni in 0..n {
            let row = &x[(ni * c + ch) * l..(ni * c + ch + 1) * l];
            sq += row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        std[ch] = (sq / m).sqrt();
    }
    (mean, std)
}

/// out = γ·(x−μ)/(δ+ε) + β with the given per-channel μ, δ.
pub(crate) fn bn_affine_fwd(
    x: &[f64],
    n: usize,
    c: usize,
    l: usize,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    std: &[f64],
    eps: f64,
    out: &mut [f64],
) {
    for ni in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] / (std[ch] + eps);
            let shift = beta[ch] - mean[ch] * scale;
            let base = (ni * c + ch) * l;
            for t in 0..l {
                out[base + t] = x[base + t] * scale + shift;
            }
        }
    }
}

/// Backward through train-mode batch normalization (batch μ, δ are functions
/// of x). Accumulates into dx, dgamma, dbeta.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_train_bwd(
    x: &[f64],
    gy: &[f64],
    n: usize,
    c: usize,
    l: usize,
    gamma: &[f64],
    mean: &[f64],
    std: &[f64],
    eps: f64,
    dx: Option<&mut [f64]>,
    dgamma: Option<&mut [f64]>,
    dbeta: Option<&mut [f64]>,
) {
    let m = (n * l) as f64;
    let mut dx = dx;
    let mut dgamma = dgamma;
    let mut dbeta = dbeta;
    for ch in 0..c {
        let s = std[ch] + eps;
        let inv_s = 1.0 / s;
        let mu = mean[ch];
        // S = Σ g·x̂, G = Σ g over the channel.
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for ni in 0..n {
            let base = (ni * c + ch) * l;
            for t in 0..l {
                let g = gy[base + t];
                sum_g += g;
                sum_gx += g * (x[base + t] - mu) * inv_s;
            }
        }
        if let Some(dgamma) = dgamma.as_deref_mut() {
            dgamma[ch] += sum_gx;
        }
        if let Some(dbeta) = dbeta.as_deref_mut() {
            dbeta[ch] += sum_g;
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dx = γ/s·(g − Ḡ) − γ·x̂·S/(M·δ); the δ term vanishes for a
            // constant channel (x̂ ≡ 0), so guard the division.
            let gsc = gamma[ch] * inv_s;
            let mean_g = sum_g / m;
            let delta_term = if std[ch] > 0.0 {
                gamma[ch] * sum_gx / (m * std[ch])
            } else {
                0.0
            };
            for ni in 0..n {
                let base = (ni * c + ch) * l;
                for t in 0..l {
                    let xhat = (x[base + t] - mu) * inv_s;
                    dx[base + t] += gsc * (gy[base + t] - mean_g) - delta_term * xhat;
                }
            }
        }
    }
}

/// Backward through eval-mode batch normalization (running μ, δ are
/// constants).
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_eval_bwd(
    x: &[f64],
    gy: &[f64],
    n: usize,
    c: usize,
    l: usize,
    gamma: &[f64],
    mean: &[f64],
    std: &[f64],
    eps: f64,
    dx: Option<&mut [f64]>,
    dgamma: Option<&mut [f64]>,
    dbeta: Option<&mut [f64]>,
) {
    let mut dx = dx;
    let mut dgamma = dgamma;
    let mut dbeta = dbeta;
    for ch in 0..c {
        let inv_s = 1.0 / (std[ch] + eps);
        let mu = mean[ch];
        let gsc = gamma[ch] * inv_s;
        for ni in 0..n {
            let base = (ni * c + ch) * l;
            for t in 0..l {
                let g = gy[base + t];
                if let Some(dgamma) = dgamma.as_deref_mut() {
                    dgamma[ch] += g * (x[base + t] - mu) * inv_s;
                }
                if let Some(dbeta) = dbeta.as_deref_mut() {
                    dbeta[ch] += g;
                }
                if let Some(dx) = dx.as_deref_mut() {
                    dx[base + t] += g * gsc;
                }
            }
        }
    }
}

// ── LSTM ────────────────────────────────────────────────────────────────

/// Gate order used for all per-gate arrays: update (input), forget, output,
/// candidate.
pub(crate) const GATES: usize = 4;

/// Saved per-step activations needed for backpropagation through time.
/// Every buffer is laid out `[t*h + i]`.
#[derive(Debug, Clone)]
pub(crate) struct LstmSaved {
    pub u: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Transpose an [h, d] weight into [d, h] so the per-step gate update is a
/// contiguous axpy over hidden units.
fn transpose_w(w: &[f64], h: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * d];
    for r in 0..h {
        for cidx in 0..d {
            out[cidx * h + r] = w[r * d + cidx];
        }
    }
    out
}

/// Run the recurrence over a `[t, d]` sequence, returning all hidden states
/// `[t, h]` plus saved activations. `wx` are the four `[h, d]` input weight
/// matrices, `wh` the four `[h, h]` recurrent ones, `b` the four `[h]`
/// biases; `h0`/`c0` default to zero when `None`.
///
/// The input contributions `x_t·Wxᵀ + b` for all steps are computed up
/// front as one matrix product per gate; the time loop only adds the
/// recurrent term.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_fwd(
    x: &[f64],
    t_len: usize,
    d: usize,
    h: usize,
    wx: [&[f64]; GATES],
    wh: [&[f64]; GATES],
    b: [&[f64]; GATES],
    h0: Option<&[f64]>,
    c0: Option<&[f64]>,
) -> (Vec<f64>, LstmSaved) {
    let wht: Vec<Vec<f64>> = wh.iter().map(|w| transpose_w(w, h, h)).collect();

    // xz[gate] = X · Wxᵀ + b, shape [t, h].
    let xz: Vec<Vec<f64>> = (0..GATES)
        .map(|gate| {
            let wxt = transpose_w(wx[gate], h, d);
            let mut z = vec![0.0; t_len * h];
            crate::tensor::mm_nn_into(x, &wxt, t_len, d, h, &mut z);
            for row in z.chunks_mut(h) {
                for (zv, &bv) in row.iter_mut().zip(b[gate]) {
                    *zv += bv;
                }
            }
            z
        })
        .collect();

    let mut hidden = vec![0.0; t_len * h];
    let mut saved = LstmSaved {
        u: vec![0.0; t_len * h],
        f: vec![0.0; t_len * h],
        o: vec![0.0; t_len * h],
        g: vec![0.0; t_len * h],
        c: vec![0.0; t_len * h],
        tanh_c: vec![0.0; t_len * h],
    };
    let zero = vec![0.0; h];
    let h_init = h0.unwrap_or(&zero);
    let c_init = c0.unwrap_or(&zero);

    let mut z = vec![0.0; GATES * h];
    for t in 0..t_len {
        let h_prev: &[f64] = if t == 0 {
            h_init
        } else {
            &hidden[(t - 1) * h..t * h]
        };
        for gate in 0..GATES {
            let zg = &mut z[gate * h..(gate + 1) * h];
            zg.copy_from_slice(&xz[gate][t * h..(t + 1) * h]);
            for (hi, &hv) in h_prev.iter().enumerate() {
                let wcol = &wht[gate][hi * h..(hi + 1) * h];
                for (zv, &wv) in zg.iter_mut().zip(wcol) {
                    *zv += hv * wv;
                }
            }
        }
        let base = t * h;
        for i in 0..h {
            let u = sigmoid(z[i]);
            let f = sigmoid(z[h + i]);
            let o = sigmoid(z[2 * h + i]);
            let g = z[3 * h + i].tanh();
            let c_prev = if t == 0 {
                c_init[i]
            } else {
                saved.c[(t - 1) * h + i]
            };
            let c = f * c_prev + u * g;
            let tc = c.tanh();
            saved.u[base + i] = u;
            saved.f[base + i] = f;
            saved.o[base + i] = o;
            saved.g[base + i] = g;
            saved.c[base + i] = c;
            saved.tanh_c[base + i] = tc;
            hidden[base + i] = o * tc;
        }
    }
    (hidden, saved)
}

/// Gradient buffers produced by [`lstm_bwd`].
#[derive(Debug)]
pub(crate) struct LstmGrads {
    pub dx: Vec<f64>,
    pub dwx: [Vec<f64>; GATES],
    pub dwh: [Vec<f64>; GATES],
    pub db: [Vec<f64>; GATES],
}

/// Swap the first two axes of an `[a, b, c]` tensor.
pub(crate) fn swap01(src: &[f64], a: usize, b: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; a * b * c];
    for ai in 0..a {
        for bi in 0..b {
            let s = (ai * b + bi) * c;
            let d = (bi * a + ai) * c;
            out[d..d + c].copy_from_slice(&src[s..s + c]);
        }
    }
    out
}

/// Saved state of the batched recurrence; every buffer is `[t, n, h]` so
/// each time step is one contiguous block.
#[derive(Debug, Clone)]
pub(crate) struct LstmBatchSaved {
    pub u: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    /// Hidden states in internal `[t, n, h]` layout.
    pub hidden: Vec<f64>,
}

/// Batched recurrence over `[n, t, d]` input with zero initial state,
/// returning `[n, t, h]` hidden states. Row-for-row this reproduces
/// [`lstm_fwd`] bit for bit: every per-element summation runs in the same
/// order, the work is just grouped into per-step matrix products over the
/// batch.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_fwd_batched(
    x: &[f64],
    n: usize,
    t_len: usize,
    d: usize,
    h: usize,
    wx: [&[f64]; GATES],
    wh: [&[f64]; GATES],
    b: [&[f64]; GATES],
) -> (Vec<f64>, LstmBatchSaved) {
    let xp = swap01(x, n, t_len, d); // [t, n, d]
    let wht: Vec<Vec<f64>> = wh.iter().map(|w| transpose_w(w, h, h)).collect();

    // xz[gate] = Xᵖ · Wxᵀ + b over all (t, n) rows at once.
    let xz: Vec<Vec<f64>> = (0..GATES)
        .map(|gate| {
            let wxt = transpose_w(wx[gate], h, d);
            let mut z = vec![0.0; t_len * n * h];
            crate::tensor::mm_nn_into(&xp, &wxt, t_len * n, d, h, &mut z);
            for row in z.chunks_mut(h) {
                for (zv, &bv) in row.iter_mut().zip(b[gate]) {
                    *zv += bv;
                }
            }
            z
        })
        .collect();

    let block = n * h;
    let mut saved = LstmBatchSaved {
        u: vec![0.0; t_len * block],
        f: vec![0.0; t_len * block],
        o: vec![0.0; t_len * block],
        g: vec![0.0; t_len * block],
        c: vec![0.0; t_len * block],
        tanh_c: vec![0.0; t_len * block],
        hidden: vec![0.0; t_len * block],
    };

    let mut z = vec![0.0; GATES * block];
    for t in 0..t_len {
        for gate in 0..GATES {
            let zg = &mut z[gate * block..(gate + 1) * block];
            zg.copy_from_slice(&xz[gate][t * block..(t + 1) * block]);
            if t > 0 {
                let hprev = &saved.hidden[(t - 1) * block..t * block];
                crate::tensor::mm_nn_into(hprev, &wht[gate], n, h, h, zg);
            }
        }
        let base = t * block;
        for i in 0..block {
            let u = sigmoid(z[i]);
            let f = sigmoid(z[block + i]);
            let o = sigmoid(z[2 * block + i]);
            let g = z[3 * block + i].tanh();
            let c_prev = if t == 0 { 0.0 } else { saved.c[base - block + i] };
            let c = f * c_prev + u * g;
            let tc = c.tanh();
            saved.u[base + i] = u;
            saved.f[base + i] = f;
            saved.o[base + i] = o;
            saved.g[base + i] = g;
            saved.c[base + i] = c;
            saved.tanh_c[base + i] = tc;
            saved.hidden[base + i] = o * tc;
        }
    }
    let out = swap01(&saved.hidden, t_len, n, h); // [n, t, h]
    (out, saved)
}

/// Backpropagation through the batched recurrence. `gy` is `[n, t, h]`;
/// the returned `dx` is `[n, t, d]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_bwd_batched(
    x: &[f64],
    n: usize,
    t_len: usize,
    d: usize,
    h: usize,
    wx: [&[f64]; GATES],
    wh: [&[f64]; GATES],
    saved: &LstmBatchSaved,
    gy: &[f64],
) -> LstmGrads {
    let block = n * h;
    let gyp = swap01(gy, n, t_len, h); // [t, n, h]
    let mut dzbuf: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; t_len * block]);
    let mut dh_next = vec![0.0; block];
    let mut dc_next = vec![0.0; block];

    for t in (0..t_len).rev() {
        let base = t * block;
        for i in 0..block {
            let dh = gyp[base + i] + dh_next[i];
            let o = saved.o[base + i];
            let tc = saved.tanh_c[base + i];
            let dc = dc_next[i] + dh * o * (1.0 - tc * tc);
            let u = saved.u[base + i];
            let f = saved.f[base + i];
            let g = saved.g[base + i];
            let c_prev = if t == 0 { 0.0 } else { saved.c[base - block + i] };
            let do_ = dh * tc;
            let du = dc * g;
            let df = dc * c_prev;
            let dg = dc * u;
            dzbuf[0][base + i] = du * u * (1.0 - u);
            dzbuf[1][base + i] = df * f * (1.0 - f);
            dzbuf[2][base + i] = do_ * o * (1.0 - o);
            dzbuf[3][base + i] = dg * (1.0 - g * g);
            dc_next[i] = dc * f;
        }
        dh_next.fill(0.0);
        for gate in 0..GATES {
            let dzg = &dzbuf[gate][base..base + h * n];
            crate::tensor::mm_nn_into(dzg, wh[gate], n, h, h, &mut dh_next);
        }
    }

    // h_prev over all rows: block 0 is the zero initial state.
    let mut hprev = vec![0.0; t_len * block];
    hprev[block..].copy_from_slice(&saved.hidden[..(t_len - 1) * block]);
    let xp = swap01(x, n, t_len, d);

    let mut grads = LstmGrads {
        dx: Vec::new(),
        dwx: std::array::from_fn(|_| vec![0.0; h * d]),
        dwh: std::array::from_fn(|_| vec![0.0; h * h]),
        db: std::array::from_fn(|_| vec![0.0; h]),
    };
    let mut dxp = vec![0.0; t_len * n * d];
    for gate in 0..GATES {
        let dzg = &dzbuf[gate];
        for row in dzg.chunks(h) {
            for (bv, &zv) in grads.db[gate].iter_mut().zip(row) {
                *bv += zv;
            }
        }
        let dzt = transpose_w(dzg, t_len * n, h);
        crate::tensor::mm_nn_into(&dzt, &xp, h, t_len * n, d, &mut grads.dwx[gate]);
        crate::tensor::mm_nn_into(&dzt, &hprev, h, t_len * n, h, &mut grads.dwh[gate]);
        crate::tensor::mm_nn_into(dzg, wx[gate], t_len * n, h, d, &mut dxp);
    }
    grads.dx = swap01(&dxp, t_len, n, d);
    grads
}

/// Full backpropagation through time for [`lstm_fwd`] with zero initial
/// state. `gy` is the upstream gradient on the stacked hidden states.
///
/// The reverse time loop only carries the recurrent chains and records the
/// pre-activation gradients dz; weight and input gradients then come from
/// whole-sequence matrix products, which keeps the hot loops cache-local.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_bwd(
    x: &[f64],
    t_len: usize,
    d: usize,
    h: usize,
    wx: [&[f64]; GATES],
    wh: [&[f64]; GATES],
    hidden: &[f64],
    saved: &LstmSaved,
    gy: &[f64],
) -> LstmGrads {
    let mut grads = LstmGrads {
        dx: vec![0.0; t_len * d],
        dwx: std::array::from_fn(|_| vec![0.0; h * d]),
        dwh: std::array::from_fn(|_| vec![0.0; h * h]),
        db: std::array::from_fn(|_| vec![0.0; h]),
    };
    let mut dzbuf: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; t_len * h]);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];

    for t in (0..t_len).rev() {
        let base = t * h;
        for i in 0..h {
            let dh = gy[base + i] + dh_next[i];
            let o = saved.o[base + i];
            let tc = saved.tanh_c[base + i];
            let dc = dc_next[i] + dh * o * (1.0 - tc * tc);
            let u = saved.u[base + i];
            let f = saved.f[base + i];
            let g = saved.g[base + i];
            let c_prev = if t == 0 { 0.0 } else { saved.c[base - h + i] };
            let do_ = dh * tc;
            let du = dc * g;
            let df = dc * c_prev;
            let dg = dc * u;
            dzbuf[0][base + i] = du * u * (1.0 - u);
            dzbuf[1][base + i] = df * f * (1.0 - f);
            dzbuf[2][base + i] = do_ * o * (1.0 - o);
            dzbuf[3][base + i] = dg * (1.0 - g * g);
            dc_next[i] = dc * f;
        }
        dh_next.fill(0.0);
        for gate in 0..GATES {
            let dzg = &dzbuf[gate][base..base + h];
            for (i, &dzv) in dzg.iter().enumerate() {
                if dzv == 0.0 {
                    continue;
                }
                let whrow = &wh[gate][i * h..(i + 1) * h];
                for (dhv, &wv) in dh_next.iter_mut().zip(whrow) {
                    *dhv += dzv * wv;
                }
            }
        }
    }

    // h_prev as a matrix: row 0 is the zero initial state, row t is h_{t-1}.
    let mut hprev = vec![0.0; t_len * h];
    hprev[h..].copy_from_slice(&hidden[..(t_len - 1) * h]);

    for gate in 0..GATES {
        let dzg = &dzbuf[gate];
        for row in dzg.chunks(h) {
            for (bv, &zv) in grads.db[gate].iter_mut().zip(row) {
                *bv += zv;
            }
        }
        // dWx = dZᵀ·X, dWh = dZᵀ·Hprev, dX += dZ·Wx.
        let dzt = transpose_w(dzg, t_len, h);
        crate::tensor::mm_nn_into(&dzt, x, h, t_len, d, &mut grads.dwx[gate]);
        crate::tensor::mm_nn_into(&dzt, &hprev, h, t_len, h, &mut grads.dwh[gate]);
        crate::tensor::mm_nn_into(dzg, wx[gate], t_len, h, d, &mut grads.dx);
    }
    grads
}
