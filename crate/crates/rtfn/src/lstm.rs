//! LSTM cell with full backpropagation through time.
//!
//! Gate layout follows the update/forget/output/candidate convention:
//!
//! ```text
//! u_t = σ(W_ux·x_t + W_uh·h_{t−1} + b_u)
//! f_t = σ(W_fx·x_t + W_fh·h_{t−1} + b_f)
//! o_t = σ(W_ox·x_t + W_oh·h_{t−1} + b_o)
//! c_t = f_t ⊙ c_{t−1} + u_t ⊙ tanh(W_cx·x_t + W_ch·h_{t−1} + b_c)
//! h_t = o_t ⊙ tanh(c_t)
//! ```

use crate::error::{Error, Result};
use crate::kernels;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Parameter, Tensor};

/// One LSTM over `[T,D]` sequences with hidden width `H`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_ux: Parameter,
    pub w_fx: Parameter,
    pub w_ox: Parameter,
    pub w_cx: Parameter,
    pub w_uh: Parameter,
    pub w_fh: Parameter,
    pub w_oh: Parameter,
    pub w_ch: Parameter,
    pub b_u: Parameter,
    pub b_f: Parameter,
    pub b_o: Parameter,
    pub b_c: Parameter,
}

impl LstmCell {
    /// Input weights are fan-in scaled by `D`, recurrent ones by `H`. The
    /// forget-gate bias starts at 1 so early gradients can flow through the
    /// cell state; all other biases start at 0.
    pub fn new(prefix: &str, input_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let wx = |name: &str, rng: &mut Rng| {
            Parameter::uniform_init(
                format!("{prefix}.{name}"),
                &[hidden, input_dim],
                input_dim,
                true,
                rng,
            )
        };
        let wh = |name: &str, rng: &mut Rng| {
            Parameter::uniform_init(format!("{prefix}.{name}"), &[hidden, hidden], hidden, true, rng)
        };
        Self {
            w_ux: wx("w_ux", rng),
            w_fx: wx("w_fx", rng),
            w_ox: wx("w_ox", rng),
            w_cx: wx("w_cx", rng),
            w_uh: wh("w_uh", rng),
            w_fh: wh("w_fh", rng),
            w_oh: wh("w_oh", rng),
            w_ch: wh("w_ch", rng),
            b_u: Parameter::new(format!("{prefix}.b_u"), Tensor::zeros(&[hidden]), false),
            b_f: Parameter::new(format!("{prefix}.b_f"), Tensor::full(&[hidden], 1.0), false),
            b_o: Parameter::new(format!("{prefix}.b_o"), Tensor::zeros(&[hidden]), false),
            b_c: Parameter::new(format!("{prefix}.b_c"), Tensor::zeros(&[hidden]), false),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_ux.value.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.w_ux.value.shape()[1]
    }

    /// Bind all twelve parameters onto the tape in canonical order.
    pub(crate) fn bind(&self, tape: &mut Tape) -> [Var; 12] {
        [
            tape.param(&self.w_ux),
            tape.param(&self.w_fx),
            tape.param(&self.w_ox),
            tape.param(&self.w_cx),
            tape.param(&self.w_uh),
            tape.param(&self.w_fh),
            tape.param(&self.w_oh),
            tape.param(&self.w_ch),
            tape.param(&self.b_u),
            tape.param(&self.b_f),
            tape.param(&self.b_o),
            tape.param(&self.b_c),
        ]
    }

    /// Graph wiring over pre-bound parameter vars (same order as
    /// [`LstmCell::bind`]).
    pub(crate) fn graph(tape: &mut Tape, x: Var, vars: &[Var; 12]) -> Result<Var> {
        let wx = [vars[0], vars[1], vars[2], vars[3]];
        let wh = [vars[4], vars[5], vars[6], vars[7]];
        let b = [vars[8], vars[9], vars[10], vars[11]];
        tape.lstm(x, wx, wh, b)
    }

    /// Run the recurrence as part of a larger graph.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let vars = self.bind(tape);
        Self::graph(tape, x, &vars)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![
            &self.w_ux, &self.w_fx, &self.w_ox, &self.w_cx, &self.w_uh, &self.w_fh, &self.w_oh,
            &self.w_ch, &self.b_u, &self.b_f, &self.b_o, &self.b_c,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.w_ux,
            &mut self.w_fx,
            &mut self.w_ox,
            &mut self.w_cx,
            &mut self.w_uh,
            &mut self.w_fh,
            &mut self.w_oh,
            &mut self.w_ch,
            &mut self.b_u,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_c,
        ]
    }
}

/// Standalone forward pass: all hidden states of `x: [T,D]` stacked to
/// `[T,H]`. `h0` and `c0` default to zero.
pub fn lstm_forward(
    x: &Tensor,
    cell: &LstmCell,
    h0: Option<&Tensor>,
    c0: Option<&Tensor>,
) -> Result<Tensor> {
    let (t_len, d) = x.dims2("lstm_forward")?;
    if d != cell.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "lstm_forward",
            lhs: x.shape().to_vec(),
            rhs: cell.w_ux.value.shape().to_vec(),
        });
    }
    let h = cell.hidden();
    for (name, state) in [("h0", h0), ("c0", c0)] {
        if let Some(s) = state {
            if s.shape() != [h] {
                return Err(Error::invalid(
                    "lstm_forward",
                    format!("{name} must have shape [{h}], got {:?}", s.shape()),
                ));
            }
        }
    }
    let wx = [
        cell.w_ux.value.data(),
        cell.w_fx.value.data(),
        cell.w_ox.value.data(),
        cell.w_cx.value.data(),
    ];
    let wh = [
        cell.w_uh.value.data(),
        cell.w_fh.value.data(),
        cell.w_oh.value.data(),
        cell.w_ch.value.data(),
    ];
    let b = [
        cell.b_u.value.data(),
        cell.b_f.value.data(),
        cell.b_o.value.data(),
        cell.b_c.value.data(),
    ];
    let (hidden, _) = kernels::lstm_fwd(
        x.data(),
        t_len,
        d,
        h,
        wx,
        wh,
        b,
        h0.map(|t| t.data()),
        c0.map(|t| t.data()),
    );
    Tensor::new(vec![t_len, h], hidden)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed_cell(d: usize, h: usize) -> LstmCell {
        let mut rng = Rng::new(0);
        let mut cell = LstmCell::new("lstm", d, h, &mut rng);
        for p in cell.params_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        cell
    }

    #[test]
    fn zero_parameters_are_a_fixed_point() {
        // With every weight and bias zero: σ(0)=0.5, tanh(0)=0, so the cell
        // state stays 0 and every hidden state is 0.
        let cell = zeroed_cell(3, 4);
        let x = Tensor::rand_uniform(&[6, 3], -1.0, 1.0, &mut Rng::new(1));
        let h = lstm_forward(&x, &cell, None, None).unwrap();
        assert_eq!(h.shape(), &[6, 4]);
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_cell_matches_closed_form() {
        // 1-dim cell evaluated by hand straight from the gate equations.
        let mut cell = zeroed_cell(1, 1);
        cell.w_ux.value = Tensor::new(vec![1, 1], vec![0.3]).unwrap();
        cell.w_uh.value = Tensor::new(vec![1, 1], vec![0.7]).unwrap();
        cell.b_u.value = Tensor::from_vec(vec![0.1]);
        cell.w_fx.value = Tensor::new(vec![1, 1], vec![-0.2]).unwrap();
        cell.b_f.value = Tensor::from_vec(vec![1.0]);
        cell.w_ox.value = Tensor::new(vec![1, 1], vec![0.4]).unwrap();
        cell.b_o.value = Tensor::from_vec(vec![-0.1]);
        cell.w_cx.value = Tensor::new(vec![1, 1], vec![0.6]).unwrap();
        cell.b_c.value = Tensor::from_vec(vec![0.2]);

        let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
        let x0 = 0.5;
        let u = sigmoid(0.3 * x0 + 0.1);
        let o = sigmoid(0.4 * x0 - 0.1);
        let g = (0.6 * x0 + 0.2f64).tanh();
        let c = u * g; // c0 = 0 kills the forget term
        let expected = o * c.tanh();

        let x = Tensor::new(vec![1, 1], vec![x0]).unwrap();
        let h = lstm_forward(&x, &cell, None, None).unwrap();
        assert!((h.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn two_step_recurrence_matches_hand_rollout() {
        let mut cell = zeroed_cell(1, 1);
        cell.w_ux.value = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        cell.w_uh.value = Tensor::new(vec![1, 1], vec![-0.3]).unwrap();
        cell.w_fx.value = Tensor::new(vec![1, 1], vec![0.2]).unwrap();
        cell.w_fh.value = Tensor::new(vec![1, 1], vec![0.4]).unwrap();
        cell.b_f.value = Tensor::from_vec(vec![1.0]);
        cell.w_ox.value = Tensor::new(vec![1, 1], vec![-0.6]).unwrap();
        cell.w_oh.value = Tensor::new(vec![1, 1], vec![0.1]).unwrap();
        cell.w_cx.value = Tensor::new(vec![1, 1], vec![0.9]).unwrap();
        cell.w_ch.value = Tensor::new(vec![1, 1], vec![0.25]).unwrap();

        let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
        let xs = [0.8, -0.4];
        let (mut h, mut c) = (0.0f64, 0.0f64);
        let mut want = Vec::new();
        for &x in &xs {
            let u = sigmoid(0.5 * x - 0.3 * h);
            let f = sigmoid(0.2 * x + 0.4 * h + 1.0);
            let o = sigmoid(-0.6 * x + 0.1 * h);
            let g = (0.9 * x + 0.25 * h).tanh();
            c = f * c + u * g;
            h = o * c.tanh();
            want.push(h);
        }
        let x = Tensor::new(vec![2, 1], vec![xs[0], xs[1]]).unwrap();
        let got = lstm_forward(&x, &cell, None, None).unwrap();
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn hidden_states_are_bounded_by_one() {
        let mut rng = Rng::new(44);
        for _ in 0..5 {
            let cell = LstmCell::new("lstm", 3, 5, &mut rng);
            let x = Tensor::rand_uniform(&[20, 3], -3.0, 3.0, &mut rng);
            let h = lstm_forward(&x, &cell, None, None).unwrap();
            assert!(h.data().iter().all(|&v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn nonzero_initial_state_feeds_first_step() {
        let mut rng = Rng::new(4);
        let cell = LstmCell::new("lstm", 2, 3, &mut rng);
        let x = Tensor::rand_uniform(&[4, 2], -1.0, 1.0, &mut rng);
        let h_zero = lstm_forward(&x, &cell, None, None).unwrap();
        let h0 = Tensor::full(&[3], 0.5);
        let c0 = Tensor::full(&[3], -0.25);
        let h_init = lstm_forward(&x, &cell, Some(&h0), Some(&c0)).unwrap();
        assert_ne!(h_zero.data()[0], h_init.data()[0]);
    }

    #[test]
    fn input_dimension_mismatch_is_an_error() {
        let mut rng = Rng::new(4);
        let cell = LstmCell::new("lstm", 2, 3, &mut rng);
        let x = Tensor::zeros(&[4, 5]);
        assert!(lstm_forward(&x, &cell, None, None).is_err());
    }
}
