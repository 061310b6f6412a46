//! LSTM cell recursion over a sequence and its backpropagation through time.
//!
//! Gates (blocks of `H` rows, in this order): input `i`, forget `f`,
//! cell candidate `g`, output `o`.
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)     f = σ(W_f x + U_f h + b_f)
//! g = tanh(W_g x + U_g h + b_g)  o = σ(W_o x + U_o h + b_o)
//! c' = f ⊙ c + i ⊙ g             h' = o ⊙ tanh(c')
//! ```

use serde::{Deserialize, Serialize};

use super::linalg::{matvec_acc, matvec_t_acc, outer_acc};
use super::Tensor;
use crate::error::{Error, Result};

pub const GATES: [&str; 4] = ["input", "forget", "cell", "output"];

/// Weights of one LSTM layer with the four gates stacked along rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// `4H × D` input weights.
    pub w: Tensor,
    /// `4H × H` recurrent weights.
    pub u: Tensor,
    /// `4H` biases.
    pub b: Tensor,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Tensor::zeros(&[4 * hidden, input]),
            u: Tensor::zeros(&[4 * hidden, hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let (ws, us, bs) = (self.w.shape(), self.u.shape(), self.b.shape());
        let ok = ws.len() == 2
            && us.len() == 2
            && bs.len() == 1
            && us[0] == 4 * us[1]
            && ws[0] == us[0]
            && bs[0] == us[0];
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "inconsistent LSTM parameters: W {ws:?}, U {us:?}, b {bs:?}"
            )))
        }
    }

    /// Rows of gate `g` (index into [`GATES`]) of the input weights.
    pub fn gate_input_weights(&self, gate: usize) -> &[f64] {
        let (h, d) = (self.hidden(), self.input());
        &self.w.values()[gate * h * d..(gate + 1) * h * d]
    }

    pub fn gate_recurrent_weights(&self, gate: usize) -> &[f64] {
        let h = self.hidden();
        &self.u.values()[gate * h * h..(gate + 1) * h * h]
    }

    pub fn gate_bias(&self, gate: usize) -> &[f64] {
        let h = self.hidden();
        &self.b.values()[gate * h..(gate + 1) * h]
    }

    pub fn num_params(&self) -> usize {
        self.w.numel() + self.u.numel() + self.b.numel()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    /// Per step `[i, f, g, o]`, `T × 4H`.
    gates: Vec<f64>,
    /// Cell states `c_0..c_T` (`(T + 1) × H`, first row zero).
    cells: Vec<f64>,
    /// `tanh(c_t)`, `T × H`.
    tanh_cells: Vec<f64>,
}

/// Runs the recursion from zero state; returns the `T × H` hidden states.
pub(crate) fn forward(
    seq: &[f64],
    steps: usize,
    w: &[f64],
    u: &[f64],
    b: &[f64],
    hidden: usize,
) -> (Vec<f64>, LstmCache) {
    let h4 = 4 * hidden;
    let d = seq.len() / steps;
    let mut hs = vec![0.0; steps * hidden];
    let mut cache = LstmCache {
        gates: vec![0.0; steps * h4],
        cells: vec![0.0; (steps + 1) * hidden],
        tanh_cells: vec![0.0; steps * hidden],
    };
    let mut h_prev = vec![0.0; hidden];
    let mut z = vec![0.0; h4];
    for t in 0..steps {
        z.copy_from_slice(b);
        matvec_acc(w, &seq[t * d..(t + 1) * d], &mut z);
        matvec_acc(u, &h_prev, &mut z);
        let gates = &mut cache.gates[t * h4..(t + 1) * h4];
        for k in 0..hidden {
            gates[k] = sigmoid(z[k]);
            gates[hidden + k] = sigmoid(z[hidden + k]);
            gates[2 * hidden + k] = z[2 * hidden + k].tanh();
            gates[3 * hidden + k] = sigmoid(z[3 * hidden + k]);
        }
        for k in 0..hidden {
            let (i, f, g, o) = (
                gates[k],
                gates[hidden + k],
                gates[2 * hidden + k],
                gates[3 * hidden + k],
            );
            let c = f * cache.cells[t * hidden + k] + i * g;
            let tc = c.tanh();
            cache.cells[(t + 1) * hidden + k] = c;
            cache.tanh_cells[t * hidden + k] = tc;
            h_prev[k] = o * tc;
        }
        hs[t * hidden..(t + 1) * hidden].copy_from_slice(&h_prev);
    }
    (hs, cache)
}

pub(crate) struct LstmGrads<'a> {
    pub dw: Option<&'a mut [f64]>,
    pub du: Option<&'a mut [f64]>,
    pub db: Option<&'a mut [f64]>,
    pub dseq: Option<&'a mut [f64]>,
}

/// Backpropagation through time.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    seq: &[f64],
    steps: usize,
    w: &[f64],
    u: &[f64],
    hidden: usize,
    hs: &[f64],
    cache: &LstmCache,
    dhs: &[f64],
    mut grads: LstmGrads<'_>,
) {
    let h4 = 4 * hidden;
    let d = seq.len() / steps;
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dz = vec![0.0; h4];
    let zeros = vec![0.0; hidden];
    for t in (0..steps).rev() {
        let gates = &cache.gates[t * h4..(t + 1) * h4];
        for k in 0..hidden {
            let (i, f, g, o) = (
                gates[k],
                gates[hidden + k],
                gates[2 * hidden + k],
                gates[3 * hidden + k],
            );
            let tc = cache.tanh_cells[t * hidden + k];
            let c_prev = cache.cells[t * hidden + k];
            let dh = dhs[t * hidden + k] + dh_next[k];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            dz[k] = dc * g * i * (1.0 - i);
            dz[hidden + k] = dc * c_prev * f * (1.0 - f);
            dz[2 * hidden + k] = dc * i * (1.0 - g * g);
            dz[3 * hidden + k] = d_o * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        let x_t = &seq[t * d..(t + 1) * d];
        let h_prev = if t == 0 {
            &zeros[..]
        } else {
            &hs[(t - 1) * hidden..t * hidden]
        };
        if let Some(dw) = grads.dw.as_deref_mut() {
            outer_acc(dw, &dz, x_t);
        }
        if let Some(du) = grads.du.as_deref_mut() {
            outer_acc(du, &dz, h_prev);
        }
        if let Some(db) = grads.db.as_deref_mut() {
            db.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
        }
        if let Some(dseq) = grads.dseq.as_deref_mut() {
            matvec_t_acc(w, &dz, &mut dseq[t * d..(t + 1) * d]);
        }
        dh_next.fill(0.0);
        matvec_t_acc(u, &dz, &mut dh_next);
    }
}
