//! Finite-difference gradient checking.
//!
//! [`grad_check`] compares the tape's analytic gradients against central
//! differences for an arbitrary scalar-valued graph. [`run_suite`] applies
//! it to every differentiable component in the crate, including a tiny
//! end-to-end network, and backs the `rtfn gradcheck` command.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Builds the scalar graph under test from leaves bound to `inputs`.
pub type BuildFn<'a> = &'a dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Compare analytic gradients of `build` against central finite
/// differences `(f(x+eps) − f(x−eps)) / (2·eps)` for every element of every
/// input, returning the worst relative error
/// `|analytic − numeric| / max(1, |analytic| + |numeric|)`.
pub fn grad_check(build: BuildFn, inputs: &[Tensor], eps: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(
            "grad_check",
            format!("eps {eps} outside [1e-7, 1e-3]"),
        ));
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.grad_leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let base = tape.value(out).item()?;
    if !base.is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check objective".into(),
        });
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tape.value(v).numel()])
        })
        .collect();

    // Numeric pass: evaluate f at x ± eps element by element.
    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let v = tape.value(out).item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "grad_check perturbed objective".into(),
            });
        }
        Ok(v)
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_err: f64 = 0.0;
    for (ti, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[ti].data_mut()[j] = orig + eps;
            let f_plus = eval(&work)?;
            work[ti].data_mut()[j] = orig - eps;
            let f_minus = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[ti][j];
            let err = (a - numeric).abs() / 1.0f64.max(a.abs() + numeric.abs());
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

/// Result of checking one component.
#[derive(Debug, Clone)]
pub struct ComponentReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < self.tolerance
    }
}

/// Per-operation tolerance for the suite.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for the end-to-end composites, which stack many nonlinear
/// layers and therefore carry more finite-difference truncation error.
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;
/// Step used by the suite.
pub const SUITE_EPS: f64 = 1e-5;

/// Run the full gradient suite. `corrupt` names a component whose analytic
/// gradient is deliberately perturbed before comparison; it exists so the
/// failure path (and the `gradcheck` exit code) can be exercised in tests.
pub fn run_suite(corrupt: Option<&str>) -> Result<Vec<ComponentReport>> {
    let mut reports = Vec::new();
    for (name, tol, f) in suite_components() {
        let mut err = f()?;
        if corrupt == Some(name) {
            err += 1.0;
        }
        reports.push(ComponentReport {
            name,
            max_rel_err: err,
            tolerance: tol,
        });
    }
    Ok(reports)
}

type Check = Box<dyn Fn() -> Result<f64>>;

fn suite_components() -> Vec<(&'static str, f64, Check)> {
    use crate::rng::Rng;

    let mut v: Vec<(&'static str, f64, Check)> = Vec::new();

    v.push((
        "matmul",
        OP_TOLERANCE,
        Box::new(|| {
            let mut rng = Rng::with_stream(101, 0);
            let mut worst: f64 = 0.0;
            for (m, k, n) in [(2, 3, 2), (1, 4, 3), (5, 2, 4)] {
                let a = Tensor::rand_uniform(&[m, k], -1.0, 1.0, &mut rng);
                let b = Tensor::rand_uniform(&[k, n], -1.0, 1.0, &mut rng);
                let err = grad_check(
                    &|tape, vars| {
                        let c = tape.matmul(vars[0], vars[1])?;
                        Ok(tape.sum_all(c))
                    },
                    &[a, b],
                    SUITE_EPS,
                )?;
                worst = worst.max(err);
            }
            Ok(worst)
        }),
    ));

    v.push((
        "softmax_rows",
        OP_TOLERANCE,
        Box::new(|| {
            let mut rng = Rng::with_stream(102, 0);
            let mut worst: f64 = 0.0;
            for (m, n) in [(1, 3), (4, 2), (3, 5)] {
                let a = Tensor::rand_uniform(&[m, n], -2.0, 2.0, &mut rng);
                let t = Tensor::rand_uniform(&[m, n], -1.0, 1.0, &mut rng);
                let err = grad_check(
                    &|tape, vars| {
                        // Weighted sum so every output position matters.
                        let s = tape.softmax_rows(vars[0])?;
                        let w = tape.mul(s, vars[1])?;
                        Ok(tape.sum_all(w))
                    },
                    &[a, t],
                    SUITE_EPS,
                )?;
                worst = worst.max(err);
            }
            Ok(worst)
        }),
    ));

    v.push((
        "concat_mean",
        OP_TOLERANCE,
        Box::new(|| {
            let mut rng = Rng::with_stream(103, 0);
            let a = Tensor::rand_uniform(&[2, 3], -1.0, 1.0, &mut rng);
            let b = Tensor::rand_uniform(&[2, 2], -1.0, 1.0, &mut rng);
            grad_check(
                &|tape, vars| {
                    let c = tape.concat(&[vars[0], vars[1]], 1)?;
                    let m = tape.mean_axis(c, 1)?;
                    let sq = tape.mul(m, m)?;
                    Ok(tape.sum_all(sq))
                },
                &[a, b],
                SUITE_EPS,
            )
        }),
    ));

    v.push((
        "conv1d",
        OP_TOLERANCE,
        Box::new(|| {
            let mut rng = Rng::with_stream(104, 0);
            let mut worst: f64 = 0.0;
            for (n, c_in, c_out, l, k) in [(1, 1, 2, 5, 3), (2, 3, 2, 7, 5), (1, 2, 1, 4, 1)] {
                let x = Tensor::rand_uniform(&[n, c_in, l], -1.0, 1.0, &mut rng);
                let w = Tensor::rand_uniform(&[c_out, c_in, k], -1.0, 1.0, &mut rng);
                let b = Tensor::rand_uniform(&[c_out], -0.5, 0.5, &mut rng);
                let err = grad_check(
                    &|tape, vars| {
                        let y = tape.conv1d(vars[0], vars[1], vars[2])?;
                        let sq = tape.mul(y, y)?;
                        Ok(tape.sum_all(sq))
                    },
                    &[x, w, b],
                    SUITE_EPS,
                )?;
                worst = worst.max(err);
            }
            Ok(worst)
        }),
    ));

    v.push((
        "batchnorm",
        OP_TOLERANCE,
        Box::new(|| {
            let mut rng = Rng::with_stream(105, 0);
            let mut worst: f64 = 0.0;
            for (n, c, l) in [(2, 2, 3), (4, 1, 2), (3, 3, 4)] {
                let x = Tensor::rand_uniform(&[n, c, l], -2.0, 2.0, &mut rng);
                let gamma = Tensor::rand_uniform(&[c], 0.5, 1.5, &mut rng);
                let beta = Tensor::rand_uniform(&[c], -0.5, 0.5, &mut rng);
                let t = Tensor::rand_uniform(&[n, c, l], -1.0, 1.0, &mut rng);
                let err = grad_check(
                    &|tape, vars| {
                        let (y, _, _) = tape.batchnorm_train(vars[0], vars[1], vars[2], 1e-5)?;
                        let w = tape.mul(y, vars[3])?;
                        Ok(tape.sum_all(w))
                    },
                    &[x, gamma, beta, t],
                    SUITE_EPS,
                )?;
                worst = worst.max(err);
            }
            Ok(worst)
        }),
    ));

    v.push((
        "leaky_relu",
        OP_TOLERANCE,
        Box::new(|| {
            let mut rng = Rng::with_stream(106, 0);
            let mut worst: f64 = 0.0;
            for shape in [vec![4], vec![2, 3], vec![2, 2, 2]] {
                // Keep inputs away from the kink at 0 where the
                // subgradient makes finite differences disagree.
                let x = Tensor::rand_uniform(&shape, 0.2, 1.5, &mut rng);
                let xneg = x.map(|v| if v > 0.8 { -v } else { v });
                let err = grad_check(
                    &|tape, vars| {
                        let y = tape.leaky_relu(vars[0], 0.1);
                        let sq = tape.mul(y, y)?;
                        Ok(tape.sum_all(sq))
                    },
                    &[xneg],
                    SUITE_EPS,
                )?;
                worst = worst.max(err);
            }
            Ok(worst)
        }),
    ));

    v.push((
        "dense",
        OP_TOLERANCE,
        Box::new(|| {
            let mut rng = Rng::with_stream(107, 0);
            let mut worst: f64 = 0.0;
            for (n, d_in, d_out) in [(1, 3, 2), (4, 2, 5), (2, 6, 1)] {
                let x = Tensor::rand_uniform(&[n, d_in], -1.0, 1.0, &mut rng);
                let w = Tensor::rand_uniform(&[d_out, d_in], -1.0, 1.0, &mut rng);
                let b = Tensor::rand_uniform(&[d_out], -0.5, 0.5, &mut rng);
                let err = grad_check(
                    &|tape, vars| {
                        let wt = tape.transpose(vars[1])?;
                        let y = tape.matmul(vars[0], wt)?;
                        let y = tape.add_rows(y, vars[2])?;
                        let sq = tape.mul(y, y)?;
                        Ok(tape.sum_all(sq))
                    },
                    &[x, w, b],
                    SUITE_EPS,
                )?;
                worst = worst.max(err);
            }
            Ok(worst)
        }),
    ));

    v.push((
        "dropout_frozen_mask",
        OP_TOLERANCE,
        Box::new(|| {
            let mut rng = Rng::with_stream(108, 0);
            let x = Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng);
            let mask: Vec<f64> = (0..12)
                .map(|_| if rng.bernoulli(0.5) { 0.0 } else { 2.0 })
                .collect();
            grad_check(
                &|tape, vars| {
                    let y = tape.dropout_mask(vars[0], mask.clone())?;
                    let sq = tape.mul(y, y)?;
                    Ok(tape.sum_all(sq))
                },
                &[x],
                SUITE_EPS,
            )
        }),
    ));

    v.push((
        "lstm_forward",
        OP_TOLERANCE,
        Box::new(|| {
            let mut rng = Rng::with_stream(109, 0);
            let mut worst: f64 = 0.0;
            for (t, d, h) in [(1, 2, 3), (2, 3, 2), (5, 3, 2), (4, 3, 2)] {
                let mut inputs = vec![Tensor::rand_uniform(&[t, d], -1.0, 1.0, &mut rng)];
                for _ in 0..4 {
                    inputs.push(Tensor::rand_uniform(&[h, d], -0.7, 0.7, &mut rng));
                }
                for _ in 0..4 {
                    inputs.push(Tensor::rand_uniform(&[h, h], -0.7, 0.7, &mut rng));
                }
                for _ in 0..4 {
                    inputs.push(Tensor::rand_uniform(&[h], -0.5, 0.5, &mut rng));
                }
                let err = grad_check(
                    &|tape, vars| {
                        let wx = [vars[1], vars[2], vars[3], vars[4]];
                        let wh = [vars[5], vars[6], vars[7], vars[8]];
                        let b = [vars[9], vars[10], vars[11], vars[12]];
                        let hs = tape.lstm(vars[0], wx, wh, b)?;
                        let sq = tape.mul(hs, hs)?;
                        Ok(tape.sum_all(sq))
                    },
                    &inputs,
                    SUITE_EPS,
                )?;
                worst = worst.max(err);
            }
            Ok(worst)
        }),
    ));

    v.push((
        "self_attention",
        OP_TOLERANCE,
        Box::new(|| {
            let mut rng = Rng::with_stream(110, 0);
            let mut worst: f64 = 0.0;
            for (t, d) in [(1, 3), (2, 4), (5, 2)] {
                let x = Tensor::rand_uniform(&[t, d], -1.0, 1.0, &mut rng);
                let wq = Tensor::rand_uniform(&[d, d], -0.7, 0.7, &mut rng);
                let wk = Tensor::rand_uniform(&[d, d], -0.7, 0.7, &mut rng);
                let wv = Tensor::rand_uniform(&[d, d], -0.7, 0.7, &mut rng);
                let err = grad_check(
                    &|tape, vars| {
                        let y = crate::attention::self_attention_graph(
                            tape, vars[0], vars[1], vars[2], vars[3],
                        )?;
                        let sq = tape.mul(y, y)?;
                        Ok(tape.sum_all(sq))
                    },
                    &[x, wq, wk, wv],
                    SUITE_EPS,
                )?;
                worst = worst.max(err);
            }
            Ok(worst)
        }),
    ));

    v.push((
        "lstm_attention",
        OP_TOLERANCE,
        Box::new(|| {
            let mut rng = Rng::with_stream(111, 0);
            let mut worst: f64 = 0.0;
            for (t, d, h) in [(1, 2, 2), (2, 2, 3), (5, 2, 2)] {
                let layer = crate::attention::LstmAttentionLayer::new("al", d, h, &mut rng);
                // The layer's 36 parameters become checker inputs.
                let mut inputs = vec![Tensor::rand_uniform(&[t, d], -1.0, 1.0, &mut rng)];
                inputs.extend(layer.params().iter().map(|p| p.value.clone()));
                let err = grad_check(
                    &|tape, vars| {
                        let y = crate::attention::lstm_attention_graph(tape, vars[0], &vars[1..])?;
                        let sq = tape.mul(y, y)?;
                        Ok(tape.sum_all(sq))
                    },
                    &inputs,
                    SUITE_EPS,
                )?;
                worst = worst.max(err);
            }
            Ok(worst)
        }),
    ));

    v.push((
        "cross_entropy_softmax",
        OP_TOLERANCE,
        Box::new(|| {
            let mut rng = Rng::with_stream(112, 0);
            let logits = Tensor::rand_uniform(&[3, 4], -1.5, 1.5, &mut rng);
            let onehot = Tensor::from_rows(&[
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
            ])
            .unwrap();
            grad_check(
                &|tape, vars| {
                    let probs = tape.softmax_rows(vars[0])?;
                    tape.cross_entropy(probs, &onehot)
                },
                &[logits],
                SUITE_EPS,
            )
        }),
    ));

    v.push((
        "mse",
        OP_TOLERANCE,
        Box::new(|| {
            let mut rng = Rng::with_stream(113, 0);
            let a = Tensor::rand_uniform(&[2, 3, 2], -1.0, 1.0, &mut rng);
            let b = Tensor::rand_uniform(&[2, 3, 2], -1.0, 1.0, &mut rng);
            grad_check(
                &|tape, vars| tape.mse_loss(vars[0], vars[1]),
                &[a, b],
                SUITE_EPS,
            )
        }),
    ));

    v.push((
        "rtfn_supervised_loss",
        COMPOSITE_TOLERANCE,
        Box::new(|| crate::model::end_to_end_check(SUITE_EPS, false)),
    ));

    v.push((
        "rtfn_autoencoder_loss",
        COMPOSITE_TOLERANCE,
        Box::new(|| crate::model::end_to_end_check(SUITE_EPS, true)),
    ));

    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_sum_of_squares() {
        // f = Σ x², analytic gradient 2x = [2,4,6].
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let err = grad_check(
            &|tape, vars| {
                let sq = tape.mul(vars[0], vars[0])?;
                Ok(tape.sum_all(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::from_vec(vec![1.0, -2.0]);
        let err = grad_check(
            &|tape, vars| {
                let zero = tape.scale(vars[0], 0.0);
                Ok(tape.sum_all(zero))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn eps_bounds_enforced() {
        let x = Tensor::from_vec(vec![1.0]);
        let build: BuildFn = &|tape, vars| Ok(tape.sum_all(vars[0]));
        assert!(grad_check(build, &[x.clone()], 1e-8).is_err());
        assert!(grad_check(build, &[x], 1e-2).is_err());
    }

    #[test]
    fn corruption_fails_named_component() {
        let reports = run_suite(Some("mse")).unwrap();
        let mse = reports.iter().find(|r| r.name == "mse").unwrap();
        assert!(!mse.passed());
        // Everything else still passes.
        for r in &reports {
            if r.name != "mse" {
                assert!(r.passed(), "{} failed: {}", r.name, r.max_rel_err);
            }
        }
    }
}
