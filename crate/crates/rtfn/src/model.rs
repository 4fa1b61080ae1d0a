//! The dual-branch network: a residual multi-scale convolution branch for
//! local features, an LSTM-attention branch for position relationships,
//! their pooled features concatenated (width `tfn_channels + hidden`), plus
//! the supervised head and the reconstruction decoder.

use std::collections::BTreeMap;
use std::collections::HashSet;

use crate::attention::{self, LstmAttentionLayer, SelfAttention};
use crate::error::{Error, Result};
use crate::layers::{Conv1dBlock, DenseLayer, Mode, MultiHeadConvLayer};
use crate::rng::{self, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{Parameter, Tensor};

/// Kernel width of the two stem convolution blocks.
pub const STEM_KERNEL: usize = 11;
/// Kernel width of the residual shortcut block.
pub const SHORTCUT_KERNEL: usize = 1;

/// Architecture and run hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RtfnConfig {
    pub num_classes: usize,
    pub input_channels: usize,
    pub series_length: usize,
    /// Number of stacked LSTM-attention layers (1, 2, or 3).
    pub lstman_depth: usize,
    /// Hidden units per LSTM.
    pub hidden: usize,
    /// Channel width of the convolution branch; must split across the four
    /// multi-head kernels.
    pub tfn_channels: usize,
    pub dropout: f64,
    pub alpha: f64,
    pub bn_decay: f64,
    pub seed: u64,
}

impl RtfnConfig {
    pub fn new(num_classes: usize, input_channels: usize, series_length: usize) -> Self {
        Self {
            num_classes,
            input_channels,
            series_length,
            lstman_depth: 2,
            hidden: 128,
            tfn_channels: 128,
            dropout: 0.5,
            alpha: 0.1,
            bn_decay: 0.9,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.input_channels == 0 || self.series_length == 0 {
            return Err(Error::Config(
                "num_classes, input_channels, series_length must be positive".into(),
            ));
        }
        if !(1..=3).contains(&self.lstman_depth) {
            return Err(Error::Config(format!(
                "lstman_depth must be 1, 2, or 3, got {}",
                self.lstman_depth
            )));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be positive".into()));
        }
        if self.tfn_channels == 0 || self.tfn_channels % 4 != 0 {
            return Err(Error::Config(format!(
                "tfn_channels must be a positive multiple of 4, got {}",
                self.tfn_channels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(0.0..1.0).contains(&self.bn_decay) {
            return Err(Error::Config(format!(
                "bn_decay must be in [0, 1), got {}",
                self.bn_decay
            )));
        }
        Ok(())
    }

    /// Width of the concatenated feature vector.
    pub fn feature_width(&self) -> usize {
        self.tfn_channels + self.hidden
    }

    /// Flat key=value form (stable order), embedded in checkpoints.
    pub fn to_kv(&self) -> String {
        format!(
            "num_classes={}\ninput_channels={}\nseries_length={}\nlstman_depth={}\nhidden={}\ntfn_channels={}\ndropout={}\nalpha={}\nbn_decay={}\nseed={}\n",
            self.num_classes,
            self.input_channels,
            self.series_length,
            self.lstman_depth,
            self.hidden,
            self.tfn_channels,
            self.dropout,
            self.alpha,
            self.bn_decay,
            self.seed
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad config line: {line}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<String> {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::Config(format!("missing config key {k}")))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {k}")))
        };
        let parse_f64 = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {k}")))
        };
        Ok(Self {
            num_classes: parse_usize("num_classes")?,
            input_channels: parse_usize("input_channels")?,
            series_length: parse_usize("series_length")?,
            lstman_depth: parse_usize("lstman_depth")?,
            hidden: parse_usize("hidden")?,
            tfn_channels: parse_usize("tfn_channels")?,
            dropout: parse_f64("dropout")?,
            alpha: parse_f64("alpha")?,
            bn_decay: parse_f64("bn_decay")?,
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::Config("bad value for seed".into()))?,
        })
    }
}

/// Convolutional local-feature branch: two stem blocks, a multi-head layer,
/// self-attention over time, a second multi-head layer, and a kernel-1
/// shortcut from the stem output into the residual junction.
#[derive(Debug, Clone)]
pub struct TfnNetwork {
    pub stem0: Conv1dBlock,
    pub stem1: Conv1dBlock,
    pub mh1: MultiHeadConvLayer,
    pub sa: SelfAttention,
    pub mh2: MultiHeadConvLayer,
    pub shortcut: Conv1dBlock,
}

impl TfnNetwork {
    pub fn new(cfg: &RtfnConfig, rng: &mut Rng) -> Self {
        let c = cfg.tfn_channels;
        Self {
            stem0: Conv1dBlock::new(
                "tfn.stem0",
                cfg.input_channels,
                c,
                STEM_KERNEL,
                cfg.alpha,
                cfg.bn_decay,
                rng,
            ),
            stem1: Conv1dBlock::new("tfn.stem1", c, c, STEM_KERNEL, cfg.alpha, cfg.bn_decay, rng),
            mh1: MultiHeadConvLayer::new("tfn.mh1", c, c, cfg.alpha, cfg.bn_decay, rng),
            sa: SelfAttention::new("tfn.sa", c, rng),
            mh2: MultiHeadConvLayer::new("tfn.mh2", c, c, cfg.alpha, cfg.bn_decay, rng),
            shortcut: Conv1dBlock::new(
                "tfn.shortcut",
                c,
                c,
                SHORTCUT_KERNEL,
                cfg.alpha,
                cfg.bn_decay,
                rng,
            ),
        }
    }

    /// `[N,C_in,L] -> [N,channels]`: stems, multi-head, per-sample
    /// self-attention over time, second multi-head, residual addition,
    /// then temporal mean pooling.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let s0 = self.stem0.forward(tape, x, mode)?;
        let s = self.stem1.forward(tape, s0, mode)?;
        let m1 = self.mh1.forward(tape, s, mode)?;

        let [wq, wk, wv] = self.sa.bind(tape);
        let n = tape.shape(m1)[0];
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let xi = tape.select0(m1, i)?;
            let xt = tape.transpose(xi)?; // [L, C]: attention relates positions
            let a = attention::self_attention_graph(tape, xt, wq, wk, wv)?;
            rows.push(tape.transpose(a)?);
        }
        let attended = tape.stack0(&rows)?;

        let m2 = self.mh2.forward(tape, attended, mode)?;
        let sc = self.shortcut.forward(tape, s, mode)?;
        let res = tape.add(m2, sc)?;
        tape.mean_axis(res, 2)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut p = self.stem0.params();
        p.extend(self.stem1.params());
        p.extend(self.mh1.params());
        p.extend(self.sa.params());
        p.extend(self.mh2.params());
        p.extend(self.shortcut.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.stem0.params_mut();
        p.extend(self.stem1.params_mut());
        p.extend(self.mh1.params_mut());
        p.extend(self.sa.params_mut());
        p.extend(self.mh2.params_mut());
        p.extend(self.shortcut.params_mut());
        p
    }
}

/// What the network is wired for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Feature extractor plus dropout + dense classification head.
    Supervised,
    /// Feature extractor only (paired with a [`Decoder`]).
    Encoder,
}

/// The full dual-branch model.
#[derive(Debug, Clone)]
pub struct RtfnModel {
    pub config: RtfnConfig,
    pub tfn: TfnNetwork,
    pub lstman: Vec<LstmAttentionLayer>,
    pub head: Option<DenseLayer>,
    purpose: Purpose,
}

impl RtfnModel {
    pub fn new(cfg: &RtfnConfig, purpose: Purpose, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let tfn = TfnNetwork::new(cfg, rng);
        let mut lstman = Vec::with_capacity(cfg.lstman_depth);
        for i in 0..cfg.lstman_depth {
            // Layer 0 reads the raw series; deeper layers chain on [T,H].
            let d = if i == 0 { cfg.input_channels } else { cfg.hidden };
            lstman.push(LstmAttentionLayer::new(
                &format!("lstman.{i}"),
                d,
                cfg.hidden,
                rng,
            ));
        }
        let head = match purpose {
            Purpose::Supervised => Some(DenseLayer::new(
                "head",
                cfg.feature_width(),
                cfg.num_classes,
                rng,
            )),
            Purpose::Encoder => None,
        };
        let model = Self {
            config: cfg.clone(),
            tfn,
            lstman,
            head,
            purpose,
        };
        model.check_unique_names()?;
        Ok(model)
    }

    fn check_unique_names(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for p in self.params() {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::Config(format!("duplicate parameter name {}", p.name)));
            }
        }
        Ok(())
    }

    pub fn purpose(&self) -> Purpose {
        self.purpose
    }

    /// Concatenated `[N, tfn_channels + hidden]` features: the pooled
    /// convolution branch next to the pooled attention branch (which reads
    /// the series transposed to `[T=L, D=C_in]`).
    pub fn forward_features(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let n = tape.shape(x)[0];
        let tfn_feats = self.tfn.forward(tape, x, mode)?;

        let layer_vars: Vec<Vec<Var>> = self.lstman.iter().map(|l| l.bind(tape)).collect();
        let mut pooled = Vec::with_capacity(n);
        for i in 0..n {
            let xi = tape.select0(x, i)?;
            let mut cur = tape.transpose(xi)?;
            for vars in &layer_vars {
                cur = attention::lstm_attention_graph(tape, cur, vars)?;
            }
            pooled.push(tape.mean_axis(cur, 0)?);
        }
        let lstman_feats = tape.stack0(&pooled)?;

        tape.concat(&[tfn_feats, lstman_feats], 1)
    }

    /// Class logits `[N, num_classes]`; dropout is active in train mode
    /// only.
    pub fn forward_logits(
        &mut self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        if self.head.is_none() {
            return Err(Error::invalid(
                "classify",
                "model was built in encoder mode; no classification head",
            ));
        }
        let feats = self.forward_features(tape, x, mode)?;
        let feats = match mode {
            Mode::Train if self.config.dropout > 0.0 => {
                let mask = crate::layers::dropout_mask(
                    tape.value(feats).numel(),
                    self.config.dropout,
                    rng,
                );
                tape.dropout_mask(feats, mask)?
            }
            _ => feats,
        };
        self.head.as_ref().expect("checked above").forward(tape, feats)
    }

    /// Eval-mode features with no gradient bookkeeping.
    pub fn features(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let f = self.forward_features(&mut tape, xv, Mode::Eval)?;
        Ok(tape.value(f).clone())
    }

    /// Eval-mode logits.
    pub fn classify(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mut rng = Rng::new(0); // unused in eval mode
        let logits = self.forward_logits(&mut tape, xv, Mode::Eval, &mut rng)?;
        Ok(tape.value(logits).clone())
    }

    /// Argmax predictions; ties break toward the lowest class index.
    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.classify(x)?;
        let (n, k) = logits.dims2("predict")?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let row = &logits.data()[i * k..(i + 1) * k];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
        Ok(out)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut p = self.tfn.params();
        for layer in &self.lstman {
            p.extend(layer.params());
        }
        if let Some(head) = &self.head {
            p.extend(head.params());
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.tfn.params_mut();
        for layer in &mut self.lstman {
            p.extend(layer.params_mut());
        }
        if let Some(head) = &mut self.head {
            p.extend(head.params_mut());
        }
        p
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

/// Four-layer reconstruction decoder: F → F → 2F → C·L with LeakyReLU
/// between the first three layers and a linear output reshaped to the
/// input shape.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub layers: Vec<DenseLayer>,
    out_channels: usize,
    out_len: usize,
    alpha: f64,
}

impl Decoder {
    pub fn new(cfg: &RtfnConfig, rng: &mut Rng) -> Self {
        let f = cfg.feature_width();
        let out = cfg.input_channels * cfg.series_length;
        let widths = [(f, f), (f, f), (f, 2 * f), (2 * f, out)];
        let layers = widths
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| DenseLayer::new(&format!("decoder.{i}"), a, b, rng))
            .collect();
        Self {
            layers,
            out_channels: cfg.input_channels,
            out_len: cfg.series_length,
            alpha: cfg.alpha,
        }
    }

    /// `[N,F] -> [N,C_in,L]`.
    pub fn forward(&self, tape: &mut Tape, feats: Var) -> Result<Var> {
        let n = tape.shape(feats)[0];
        let mut cur = feats;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.forward(tape, cur)?;
            if i < last {
                cur = tape.leaky_relu(cur, self.alpha);
            }
        }
        tape.reshape(cur, vec![n, self.out_channels, self.out_len])
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

/// Eval-mode reconstruction `decoder(features(x))`.
pub fn autoencode(x: &Tensor, model: &mut RtfnModel, decoder: &Decoder) -> Result<Tensor> {
    if model.purpose() != Purpose::Encoder {
        return Err(Error::invalid(
            "autoencode",
            "model was built in supervised mode; use an encoder-mode model",
        ));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let feats = model.forward_features(&mut tape, xv, Mode::Eval)?;
    let rec = decoder.forward(&mut tape, feats)?;
    Ok(tape.value(rec).clone())
}

// ── end-to-end gradient verification ────────────────────────────────────

/// Central-difference check of the full loss gradient on a tiny
/// configuration (1 input channel, length 16, hidden 8, depth 1, 2
/// classes), with dropout disabled and batch normalization in eval mode so
/// repeated forwards are pure. Returns the worst relative error over every
/// parameter element.
pub fn end_to_end_check(eps: f64, autoencoder: bool) -> Result<f64> {
    let cfg = RtfnConfig {
        num_classes: 2,
        input_channels: 1,
        series_length: 16,
        lstman_depth: 1,
        hidden: 8,
        tfn_channels: 8,
        dropout: 0.0,
        alpha: 0.1,
        bn_decay: 0.9,
        seed: 20210,
    };
    let mut data_rng = Rng::with_stream(cfg.seed, rng::STREAM_DATA);
    let x = Tensor::rand_uniform(&[2, 1, cfg.series_length], -1.0, 1.0, &mut data_rng);
    let onehot = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])?;

    let mut init_rng = Rng::with_stream(cfg.seed, rng::STREAM_INIT);
    let purpose = if autoencoder {
        Purpose::Encoder
    } else {
        Purpose::Supervised
    };
    let mut model = RtfnModel::new(&cfg, purpose, &mut init_rng)?;
    let mut decoder = autoencoder.then(|| Decoder::new(&cfg, &mut init_rng));

    let loss_of = |model: &mut RtfnModel,
                   decoder: &mut Option<Decoder>,
                   want_grads: bool|
     -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let loss = match decoder {
            None => {
                let mut dummy = Rng::new(0);
                let logits = model.forward_logits(&mut tape, xv, Mode::Eval, &mut dummy)?;
                let probs = tape.softmax_rows(logits)?;
                tape.cross_entropy(probs, &onehot)?
            }
            Some(dec) => {
                let feats = model.forward_features(&mut tape, xv, Mode::Eval)?;
                let rec = dec.forward(&mut tape, feats)?;
                tape.mse_loss(rec, xv)?
            }
        };
        let value = tape.value(loss).item()?;
        let mut grads = BTreeMap::new();
        if want_grads {
            tape.backward(loss)?;
            for (name, g) in tape.take_param_grads() {
                grads
                    .entry(name)
                    .and_modify(|acc: &mut Vec<f64>| {
                        for (a, b) in acc.iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    })
                    .or_insert_with(|| g.data().to_vec());
            }
        }
        Ok((value, grads))
    };

    let (_, analytic) = loss_of(&mut model, &mut decoder, true)?;

    // Parameter signature in canonical order: model then decoder.
    let sig: Vec<(String, usize)> = {
        let mut s: Vec<(String, usize)> =
            model.params().iter().map(|p| (p.name.clone(), p.numel())).collect();
        if let Some(dec) = &decoder {
            s.extend(dec.params().iter().map(|p| (p.name.clone(), p.numel())));
        }
        s
    };
    let nudge = |model: &mut RtfnModel, decoder: &mut Option<Decoder>, pi: usize, j: usize, d: f64| {
        let mut params = model.params_mut();
        if let Some(dec) = decoder {
            params.extend(dec.params_mut());
        }
        params[pi].value.data_mut()[j] += d;
    };

    let mut max_err: f64 = 0.0;
    for (pi, (name, numel)) in sig.iter().enumerate() {
        let a_vec = analytic
            .get(name)
            .ok_or_else(|| Error::Data(format!("no analytic gradient for {name}")))?;
        for j in 0..*numel {
            nudge(&mut model, &mut decoder, pi, j, eps);
            let (f_plus, _) = loss_of(&mut model, &mut decoder, false)?;
            nudge(&mut model, &mut decoder, pi, j, -2.0 * eps);
            let (f_minus, _) = loss_of(&mut model, &mut decoder, false)?;
            nudge(&mut model, &mut decoder, pi, j, eps);
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = a_vec[j];
            let err = (a - numeric).abs() / 1.0f64.max(a.abs() + numeric.abs());
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}
