//! Losses, the RMSProp-with-momentum optimizer, the decayed learning-rate
//! schedule, and the supervised / autoencoder training loops.

use std::time::Instant;

use crate::cluster;
use crate::data::SeriesDataset;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{Decoder, RtfnModel};
use crate::rng::{self, Rng};
use crate::tape::{onehot_to_labels, Tape, CROSS_ENTROPY_CLAMP};
use crate::tensor::{Parameter, Tensor};

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay_rate: f64,
    pub lr_floor: f64,
    pub decay_period_epochs: usize,
    pub epochs: usize,
    /// Per-batch sample count; `None` means `min(16, train_size)`.
    pub batch_size: Option<usize>,
    pub momentum: f64,
    pub rms_rho: f64,
    pub rms_eps: f64,
    pub l2_coeff: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            lr_decay_rate: 0.1,
            lr_floor: 1e-4,
            decay_period_epochs: 50,
            epochs: 500,
            batch_size: None,
            momentum: 0.9,
            rms_rho: 0.9,
            rms_eps: 1e-8,
            l2_coeff: 1e-4,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let degenerate_zero = self.lr0 == 0.0 && self.lr_floor == 0.0;
        if !degenerate_zero && !(self.lr_floor > 0.0 && self.lr_floor <= self.lr0) {
            return Err(Error::Config(format!(
                "learning rate bounds need 0 < lr_floor <= lr0, got floor {} lr0 {}",
                self.lr_floor, self.lr0
            )));
        }
        if !(0.0..1.0).contains(&self.lr_decay_rate) {
            return Err(Error::Config(format!(
                "lr_decay_rate must be in [0, 1), got {}",
                self.lr_decay_rate
            )));
        }
        if self.epochs == 0 || self.decay_period_epochs == 0 {
            return Err(Error::Config(
                "epochs and decay_period_epochs must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.rms_rho) {
            return Err(Error::Config(
                "momentum and rms_rho must be in [0, 1)".into(),
            ));
        }
        if self.rms_eps <= 0.0 || self.l2_coeff < 0.0 {
            return Err(Error::Config(
                "rms_eps must be positive and l2_coeff nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch record of the training trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Top-1 accuracy (supervised) or Rand index (clustering); falls back
    /// to the train loss for unlabeled autoencoder runs.
    pub eval_metric: f64,
    pub lr_used: f64,
    pub wall_ms: u64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,eval_metric,lr,wall_ms";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.eval_metric, self.lr_used, self.wall_ms
        )
    }
}

/// Learning rate of decay period `j`: lr(j) = (1 − d)·lr(j−1) starting from
/// lr0, held at `lr_floor` once it first drops below it.
pub fn lr_schedule(j: usize, cfg: &TrainConfig) -> f64 {
    let mut lr = cfg.lr0;
    for _ in 0..j {
        lr *= 1.0 - cfg.lr_decay_rate;
        if lr < cfg.lr_floor {
            return cfg.lr_floor;
        }
    }
    if lr < cfg.lr_floor {
        cfg.lr_floor
    } else {
        lr
    }
}

/// −(1/N)·Σ log p[i, true_i] with the log argument clamped at 1e-12.
/// `labels` is a one-hot `[N,K]` matrix.
pub fn cross_entropy(probs: &Tensor, labels: &Tensor) -> Result<f64> {
    let (n, k) = probs.dims2("cross_entropy")?;
    if labels.shape() != [n, k] {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: probs.shape().to_vec(),
            rhs: labels.shape().to_vec(),
        });
    }
    let idx = onehot_to_labels(labels)?;
    let mut loss = 0.0;
    for (i, &y) in idx.iter().enumerate() {
        loss -= probs.data()[i * k + y].max(CROSS_ENTROPY_CLAMP).ln();
    }
    Ok(loss / n as f64)
}

/// Mean over all elements of (x − x_rec)².
pub fn mse_reconstruction(x: &Tensor, x_rec: &Tensor) -> Result<f64> {
    if x.shape() != x_rec.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse_reconstruction",
            lhs: x.shape().to_vec(),
            rhs: x_rec.shape().to_vec(),
        });
    }
    let sum: f64 = x
        .data()
        .iter()
        .zip(x_rec.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.numel() as f64)
}

/// Add the L2 term `l2_coeff · value` to the gradient of every
/// decay-flagged parameter.
pub fn apply_l2(params: &mut [&mut Parameter], l2_coeff: f64) {
    if l2_coeff == 0.0 {
        return;
    }
    for p in params.iter_mut() {
        if !p.decay {
            continue;
        }
        let Parameter { value, .. } = &mut **p;
        let vals = value.data().to_vec();
        if let Some(g) = value.grad_mut() {
            for (gv, v) in g.iter_mut().zip(vals) {
                *gv += l2_coeff * v;
            }
        }
    }
}

/// One optimizer step over populated gradients:
/// acc ← ρ·acc + (1−ρ)·g²; mom ← momentum·mom + lr·g/√(acc+ε);
/// value ← value − mom.
pub fn rmsprop_step(params: &mut [&mut Parameter], lr: f64, cfg: &TrainConfig) -> Result<()> {
    for p in params.iter_mut() {
        let Parameter {
            name,
            value,
            rms_acc,
            momentum_buf,
            ..
        } = &mut **p;
        let grad = value
            .grad()
            .ok_or_else(|| Error::Data(format!("parameter {name} has no gradient")))?
            .to_vec();
        let acc = rms_acc.data_mut();
        let mom = momentum_buf.data_mut();
        let vals = value.data_mut();
        for i in 0..vals.len() {
            let g = grad[i];
            acc[i] = cfg.rms_rho * acc[i] + (1.0 - cfg.rms_rho) * g * g;
            mom[i] = cfg.momentum * mom[i] + lr * g / (acc[i] + cfg.rms_eps).sqrt();
            vals[i] -= mom[i];
        }
    }
    Ok(())
}

/// Route tape gradients back to parameters by name (summing duplicates),
/// clearing stale gradients first.
pub(crate) fn apply_grads(
    params: &mut [&mut Parameter],
    grads: Vec<(String, Tensor)>,
) -> Result<()> {
    use std::collections::HashMap;
    let index: HashMap<String, usize> = params
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.clone(), i))
        .collect();
    for p in params.iter_mut() {
        p.value.clear_grad();
    }
    for (name, g) in grads {
        let &i = index
            .get(&name)
            .ok_or_else(|| Error::Data(format!("gradient for unknown parameter {name}")))?;
        match params[i].value.grad_mut() {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(g.data()) {
                    *e += v;
                }
            }
            None => params[i].value.set_grad(g.into_data())?,
        }
    }
    Ok(())
}

fn one_hot(labels: &[usize], k: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Data(format!("label {y} outside [0, {k})")));
        }
        data[i * k + y] = 1.0;
    }
    Tensor::new(vec![labels.len(), k], data)
}

/// Eval-mode top-1 accuracy over a labeled dataset, in small batches.
pub fn evaluate_accuracy(model: &mut RtfnModel, ds: &SeriesDataset) -> Result<f64> {
    let y = ds
        .y
        .as_ref()
        .ok_or_else(|| Error::Data("accuracy needs labels".into()))?;
    let mut preds = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(32) {
        let (xb, _) = ds.gather(chunk)?;
        preds.extend(model.predict(&xb)?);
    }
    cluster::top1_accuracy(y, &preds)
}

/// Eval-mode features for the whole dataset, in small batches.
pub fn extract_features(model: &mut RtfnModel, ds: &SeriesDataset) -> Result<Tensor> {
    let mut rows: Vec<f64> = Vec::new();
    let mut width = 0;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(32) {
        let (xb, _) = ds.gather(chunk)?;
        let f = model.features(&xb)?;
        width = f.shape()[1];
        rows.extend_from_slice(f.data());
    }
    Tensor::new(vec![ds.len(), width], rows)
}

/// Supervised loop: seeded shuffle, mini-batches, cross-entropy + L2,
/// RMSProp with the decayed schedule. Batch normalization runs in train
/// mode during updates and eval mode for the per-epoch metric, which is
/// test accuracy when a test split is given and train accuracy otherwise.
pub fn train_supervised(
    model: &mut RtfnModel,
    train: &SeriesDataset,
    test: Option<&SeriesDataset>,
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let n = train.len();
    if n == 0 {
        return Err(Error::Data("empty training dataset".into()));
    }
    let labels = train
        .y
        .as_ref()
        .ok_or_else(|| Error::Data("supervised training needs labels".into()))?;
    let k = train.num_classes;
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Data(format!("label {bad} outside [0, {k})")));
    }
    let batch = cfg.batch_size.unwrap_or_else(|| n.min(16)).clamp(1, n);

    let mut rng_shuffle = Rng::with_stream(cfg.seed, rng::STREAM_SHUFFLE);
    let mut rng_dropout = Rng::with_stream(cfg.seed, rng::STREAM_DROPOUT);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let lr = lr_schedule(epoch / cfg.decay_period_epochs, cfg);
        rng_shuffle.shuffle(&mut idx);
        let mut loss_sum = 0.0;
        for chunk in idx.chunks(batch) {
            let (xb, yb) = train.gather(chunk)?;
            let yb = yb.expect("labels checked above");
            let onehot = one_hot(&yb, k)?;

            let mut tape = Tape::new();
            let xv = tape.constant(xb);
            let logits = model.forward_logits(&mut tape, xv, Mode::Train, &mut rng_dropout)?;
            let probs = tape.softmax_rows(logits)?;
            let loss = tape.cross_entropy(probs, &onehot)?;
            let lv = tape.value(loss).item()?;
            if !lv.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss at epoch {epoch}"),
                });
            }
            loss_sum += lv * chunk.len() as f64;

            tape.backward(loss)?;
            let grads = tape.take_param_grads();
            let mut params = model.params_mut();
            apply_grads(&mut params, grads)?;
            apply_l2(&mut params, cfg.l2_coeff);
            rmsprop_step(&mut params, lr, cfg)?;
        }

        let eval_metric = match test {
            Some(t) => evaluate_accuracy(model, t)?,
            None => evaluate_accuracy(model, train)?,
        };
        records.push(LossRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            eval_metric,
            lr_used: lr,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
    }
    Ok(records)
}

/// Unsupervised loop: the reconstruction loss alone drives encoder and
/// decoder (no clustering term). The per-epoch metric is the Rand index of
/// k-means over eval-mode features against the held-out labels when the
/// dataset has them, otherwise the reconstruction loss itself.
pub fn train_autoencoder(
    model: &mut RtfnModel,
    decoder: &mut Decoder,
    data: &SeriesDataset,
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Data("empty training dataset".into()));
    }
    let batch = cfg.batch_size.unwrap_or_else(|| n.min(16)).clamp(1, n);

    let mut rng_shuffle = Rng::with_stream(cfg.seed, rng::STREAM_SHUFFLE);
    let mut rng_kmeans = Rng::with_stream(cfg.seed, rng::STREAM_KMEANS);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let lr = lr_schedule(epoch / cfg.decay_period_epochs, cfg);
        rng_shuffle.shuffle(&mut idx);
        let mut loss_sum = 0.0;
        for chunk in idx.chunks(batch) {
            let (xb, _) = data.gather(chunk)?;

            let mut tape = Tape::new();
            let xv = tape.constant(xb);
            let feats = model.forward_features(&mut tape, xv, Mode::Train)?;
            let rec = decoder.forward(&mut tape, feats)?;
            let loss = tape.mse_loss(rec, xv)?;
            let lv = tape.value(loss).item()?;
            if !lv.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("reconstruction loss at epoch {epoch}"),
                });
            }
            loss_sum += lv * chunk.len() as f64;

            tape.backward(loss)?;
            let grads = tape.take_param_grads();
            let mut params = model.params_mut();
            params.extend(decoder.params_mut());
            apply_grads(&mut params, grads)?;
            apply_l2(&mut params, cfg.l2_coeff);
            rmsprop_step(&mut params, lr, cfg)?;
        }

        let train_loss = loss_sum / n as f64;
        let eval_metric = match &data.y {
            Some(y) => {
                let feats = extract_features(model, data)?;
                let assignment = cluster::kmeans(&feats, data.num_classes, &mut rng_kmeans)?;
                cluster::rand_index(y, &assignment.labels)?
            }
            None => train_loss,
        };
        records.push(LossRecord {
            epoch,
            train_loss,
            eval_metric,
            lr_used: lr,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Purpose, RtfnConfig};

    #[test]
    fn lr_schedule_closed_form() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 0.01);
        assert_eq!(lr_schedule(1, &cfg), 0.9 * 0.01);
        // 0.01·0.9^60 ≈ 1.8e-5 < 1e-4: floor reached.
        assert_eq!(lr_schedule(60, &cfg), 1e-4);
        // Non-increasing, bounded below by the floor.
        let mut prev = f64::INFINITY;
        for j in 0..100 {
            let lr = lr_schedule(j, &cfg);
            assert!(lr <= prev && lr >= cfg.lr_floor);
            prev = lr;
        }
    }

    #[test]
    fn cross_entropy_perfect_and_uniform() {
        let labels = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let perfect = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(cross_entropy(&perfect, &labels).unwrap(), 0.0);

        let uniform = Tensor::full(&[1, 4], 0.25);
        let l4 = Tensor::from_rows(&[vec![0.0, 1.0, 0.0, 0.0]]).unwrap();
        let got = cross_entropy(&uniform, &l4).unwrap();
        assert!((got - 4.0f64.ln()).abs() < 1e-12, "{got}");
    }

    #[test]
    fn cross_entropy_mixed_hand_case() {
        // −(ln 0.7 + ln 0.8)/2 computed by hand.
        let probs = Tensor::from_rows(&[vec![0.7, 0.3], vec![0.2, 0.8]]).unwrap();
        let labels = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let want = -(0.7f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((cross_entropy(&probs, &labels).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_is_nonnegative_and_rejects_bad_rows() {
        let probs = Tensor::from_rows(&[vec![0.9, 0.1]]).unwrap();
        let bad = Tensor::from_rows(&[vec![0.4, 0.6]]).unwrap();
        assert!(cross_entropy(&probs, &bad).is_err());
        let labels = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(cross_entropy(&probs, &labels).unwrap() >= 0.0);
    }

    #[test]
    fn mse_cases() {
        let x = Tensor::from_vec(vec![1.0, 1.0]);
        assert_eq!(mse_reconstruction(&x, &x).unwrap(), 0.0);
        let zero = Tensor::zeros(&[2]);
        assert_eq!(mse_reconstruction(&x, &zero).unwrap(), 1.0);

        // Naive-loop oracle on a random pair.
        let mut rng = Rng::new(3);
        let a = Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let mut acc = 0.0;
        for i in 0..12 {
            let d = a.data()[i] - b.data()[i];
            acc += d * d;
        }
        acc /= 12.0;
        assert!((mse_reconstruction(&a, &b).unwrap() - acc).abs() < 1e-12);

        let c = Tensor::zeros(&[3]);
        assert!(mse_reconstruction(&x, &c).is_err());
    }

    fn scalar_param(value: f64) -> Parameter {
        Parameter::new("p", Tensor::scalar(value), true)
    }

    #[test]
    fn rmsprop_zero_gradient_keeps_parameters() {
        let cfg = TrainConfig::default();
        let mut p = scalar_param(1.5);
        p.value.set_grad(vec![0.0]).unwrap();
        let mut params = [&mut p];
        rmsprop_step(&mut params, 0.01, &cfg).unwrap();
        assert_eq!(p.value.data()[0], 1.5);
        assert_eq!(p.momentum_buf.data()[0], 0.0);
    }

    #[test]
    fn rmsprop_single_step_closed_form() {
        // Δθ = −lr·g/√(ρ·0 + (1−ρ)·g² + ε) = −0.01/√(0.1+1e-8).
        let cfg = TrainConfig::default();
        let mut p = scalar_param(1.0);
        p.value.set_grad(vec![1.0]).unwrap();
        let mut params = [&mut p];
        rmsprop_step(&mut params, 0.01, &cfg).unwrap();
        let delta = p.value.data()[0] - 1.0;
        assert!((delta - (-0.031622776601683794)).abs() < 1e-7, "{delta}");
        assert!(p.rms_acc.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rmsprop_decreases_convex_quadratic() {
        // f(θ) = θ², θ0 = 1, g = 2θ.
        let cfg = TrainConfig::default();
        let mut p = scalar_param(1.0);
        p.value.set_grad(vec![2.0]).unwrap();
        let mut params = [&mut p];
        rmsprop_step(&mut params, 0.01, &cfg).unwrap();
        let theta = p.value.data()[0];
        assert!(theta * theta < 1.0, "loss should strictly decrease, θ = {theta}");
    }

    #[test]
    fn plain_gradient_descent_decreases_convex_quadratic() {
        // Test-only θ ← θ − lr·∇f update for f(θ) = θ².
        let gd_step = |theta: f64, lr: f64| theta - lr * 2.0 * theta;
        let mut theta = 1.0;
        for _ in 0..10 {
            let next = gd_step(theta, 0.1);
            assert!(next * next < theta * theta);
            theta = next;
        }
    }

    #[test]
    fn l2_shrinks_decay_flagged_parameters_only() {
        let cfg = TrainConfig {
            l2_coeff: 0.1,
            ..TrainConfig::default()
        };
        let mut decayed = Parameter::new("w", Tensor::scalar(2.0), true);
        let mut plain = Parameter::new("b", Tensor::scalar(2.0), false);
        decayed.value.set_grad(vec![0.0]).unwrap();
        plain.value.set_grad(vec![0.0]).unwrap();
        let mut params = [&mut decayed, &mut plain];
        apply_l2(&mut params, cfg.l2_coeff);
        rmsprop_step(&mut params, 0.01, &cfg).unwrap();
        assert!(decayed.value.data()[0].abs() < 2.0);
        assert_eq!(plain.value.data()[0], 2.0);
    }

    #[test]
    fn rmsprop_is_deterministic() {
        let cfg = TrainConfig::default();
        let run = || {
            let mut p = scalar_param(1.0);
            for step in 0..10 {
                p.value.set_grad(vec![0.3 * (step as f64 + 1.0)]).unwrap();
                let mut params = [&mut p];
                rmsprop_step(&mut params, 0.01, &cfg).unwrap();
            }
            p.value.data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let cfg = TrainConfig::default();
        let mut p = scalar_param(1.0);
        let mut params = [&mut p];
        assert!(rmsprop_step(&mut params, 0.01, &cfg).is_err());
    }

    fn tiny_dataset(n: usize, rng: &mut Rng) -> SeriesDataset {
        use crate::data::{make_synthetic, SyntheticConfig, SyntheticKind};
        make_synthetic(
            SyntheticKind::Separable,
            n,
            &SyntheticConfig {
                length: 10,
                ..SyntheticConfig::default()
            },
            rng,
        )
        .unwrap()
    }

    fn tiny_model(ds: &SeriesDataset, dropout: f64) -> RtfnModel {
        let cfg = RtfnConfig {
            lstman_depth: 1,
            hidden: 4,
            tfn_channels: 4,
            dropout,
            ..RtfnConfig::new(ds.num_classes, ds.channels(), ds.length())
        };
        let mut rng = Rng::with_stream(cfg.seed, rng::STREAM_INIT);
        RtfnModel::new(&cfg, Purpose::Supervised, &mut rng).unwrap()
    }

    #[test]
    fn zero_lr_keeps_parameters_and_loss_constant() {
        let mut rng = Rng::with_stream(5, rng::STREAM_DATA);
        let ds = tiny_dataset(6, &mut rng);
        // Full batch and no dropout so each epoch sees identical batches.
        let mut model = tiny_model(&ds, 0.0);
        let before: Vec<Vec<f64>> = model.params().iter().map(|p| p.value.data().to_vec()).collect();
        let cfg = TrainConfig {
            lr0: 0.0,
            lr_floor: 0.0,
            epochs: 3,
            batch_size: Some(6),
            l2_coeff: 0.0,
            ..TrainConfig::default()
        };
        let records = train_supervised(&mut model, &ds, None, &cfg).unwrap();
        let after: Vec<Vec<f64>> = model.params().iter().map(|p| p.value.data().to_vec()).collect();
        assert_eq!(before, after);
        assert_eq!(records[0].train_loss, records[1].train_loss);
        assert_eq!(records[1].train_loss, records[2].train_loss);
    }

    #[test]
    fn training_run_is_reproducible() {
        let mut rng = Rng::with_stream(6, rng::STREAM_DATA);
        let ds = tiny_dataset(6, &mut rng);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = tiny_model(&ds, 0.5);
            train_supervised(&mut model, &ds, None, &cfg).unwrap()
        };
        let a = run();
        let b = run();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.eval_metric.to_bits(), rb.eval_metric.to_bits());
            assert_eq!(ra.lr_used.to_bits(), rb.lr_used.to_bits());
        }
    }

    #[test]
    fn label_outside_class_range_is_an_error() {
        let mut rng = Rng::with_stream(7, rng::STREAM_DATA);
        let mut ds = tiny_dataset(6, &mut rng);
        // Corrupt the class count so an existing label falls outside [0, K).
        ds.num_classes = 1;
        let mut model = tiny_model(&ds, 0.0);
        let err = train_supervised(&mut model, &ds, None, &TrainConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn autoencoder_zero_lr_keeps_reconstruction_loss_constant() {
        use crate::model::Decoder;
        let mut rng = Rng::with_stream(8, rng::STREAM_DATA);
        let ds = tiny_dataset(6, &mut rng);
        let cfg_model = RtfnConfig {
            lstman_depth: 1,
            hidden: 4,
            tfn_channels: 4,
            dropout: 0.0,
            ..RtfnConfig::new(ds.num_classes, ds.channels(), ds.length())
        };
        let mut init = Rng::with_stream(cfg_model.seed, rng::STREAM_INIT);
        let mut model = RtfnModel::new(&cfg_model, Purpose::Encoder, &mut init).unwrap();
        let mut decoder = Decoder::new(&cfg_model, &mut init);
        let cfg = TrainConfig {
            lr0: 0.0,
            lr_floor: 0.0,
            epochs: 2,
            batch_size: Some(6),
            l2_coeff: 0.0,
            ..TrainConfig::default()
        };
        let records = train_autoencoder(&mut model, &mut decoder, &ds, &cfg).unwrap();
        assert_eq!(records[0].train_loss, records[1].train_loss);
    }
}
