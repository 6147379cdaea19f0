//! Gated recurrent unit with a linear readout on the final hidden state.
//!
//! The cell follows the standard update/reset formulation:
//!
//! ```text
//! z_t = sigma(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = sigma(W_r x_t + U_r h_{t-1} + b_r)
//! hcand_t = tanh(W_h x_t + U_h (r_t . h_{t-1}) + b_h)
//! h_t = (1 - z_t) . h_{t-1} + z_t . hcand_t
//! ```
//!
//! where `.` is the elementwise (Hadamard) product. Training unrolls the
//! sequence and backpropagates through time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{sigmoid, DropoutDraw, Head};

/// GRU gate weights, recurrent weights, biases, and the readout layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_update: Matrix,
    pub w_reset: Matrix,
    pub w_candidate: Matrix,
    pub u_update: Matrix,
    pub u_reset: Matrix,
    pub u_candidate: Matrix,
    pub b_update: Vec<f64>,
    pub b_reset: Vec<f64>,
    pub b_candidate: Vec<f64>,
    /// 1 x hidden readout applied to the final hidden state.
    pub readout_weights: Matrix,
    pub readout_bias: f64,
}

impl GruParams {
    pub fn hidden_size(&self) -> usize {
        self.w_update.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w_update.cols()
    }

    pub fn parameter_count(&self) -> usize {
        let h = self.hidden_size();
        let i = self.input_size();
        3 * (h * i) + 3 * (h * h) + 3 * h + h + 1
    }
}

/// Run the cell over one sequence from `h_0 = 0`.
///
/// Returns the hidden states (one row per step) and the raw linear readout
/// of the final hidden state; any output nonlinearity is the caller's.
pub fn gru_forward(params: &GruParams, sequence: &Matrix) -> Result<(Matrix, f64)> {
    if sequence.rows() == 0 {
        return Err(Error::Argument("gru_forward needs a nonempty sequence".into()));
    }
    if sequence.cols() != params.input_size() {
        return Err(Error::Dimension(format!(
            "GRU expects {} inputs, got {}",
            params.input_size(),
            sequence.cols()
        )));
    }
    let hidden = params.hidden_size();
    let mut states = Matrix::zeros(sequence.rows(), hidden);
    let mut h = vec![0.0; hidden];
    for (t, x) in sequence.iter_rows().enumerate() {
        let z = gate(&params.w_update, &params.u_update, &params.b_update, x, &h, sigmoid);
        let r = gate(&params.w_reset, &params.u_reset, &params.b_reset, x, &h, sigmoid);
        let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
        let cand = gate(&params.w_candidate, &params.u_candidate, &params.b_candidate, x, &rh, f64::tanh);
        for j in 0..hidden {
            h[j] = (1.0 - z[j]) * h[j] + z[j] * cand[j];
        }
        states.row_mut(t).copy_from_slice(&h);
    }
    let readout = params.readout_weights.row(0).iter().zip(&h).map(|(w, v)| w * v).sum::<f64>()
        + params.readout_bias;
    Ok((states, readout))
}

fn gate(
    w: &Matrix,
    u: &Matrix,
    b: &[f64],
    x: &[f64],
    h: &[f64],
    squash: impl Fn(f64) -> f64,
) -> Vec<f64> {
    (0..w.rows())
        .map(|j| {
            let wx: f64 = w.row(j).iter().zip(x).map(|(a, b)| a * b).sum();
            let uh: f64 = u.row(j).iter().zip(h).map(|(a, b)| a * b).sum();
            squash(wx + uh + b[j])
        })
        .collect()
}

/// Per-step intermediates for one batch of equal-length sequences.
#[derive(Debug, Clone)]
pub struct GruCache {
    inputs: Vec<Matrix>,
    prev_states: Vec<Matrix>,
    update_gates: Vec<Matrix>,
    reset_gates: Vec<Matrix>,
    candidates: Vec<Matrix>,
    final_state: Matrix,
    /// Inverted-dropout mask on the final state, train mode only.
    mask: Option<Matrix>,
    pub predictions: Vec<f64>,
}

/// Forward a batch of sequences (all the same length) through the cell.
pub(crate) fn gru_forward_batch(
    params: &GruParams,
    sequences: &[&Matrix],
    head: Head,
    dropout_p: f64,
    draw: &mut DropoutDraw,
) -> Result<(Vec<f64>, GruCache)> {
    let batch = sequences.len();
    if batch == 0 {
        return Err(Error::Argument("empty batch of sequences".into()));
    }
    let steps = sequences[0].rows();
    for s in sequences {
        if s.rows() != steps {
            return Err(Error::Dimension(
                "sequences in a batch must share their length".into(),
            ));
        }
        if s.cols() != params.input_size() {
            return Err(Error::Dimension(format!(
                "GRU expects {} inputs, got {}",
                params.input_size(),
                s.cols()
            )));
        }
        if s.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite input to forward pass".into()));
        }
    }
    if steps == 0 {
        return Err(Error::Argument("gru batch needs nonempty sequences".into()));
    }

    let hidden = params.hidden_size();
    let mut h = Matrix::zeros(batch, hidden);
    let mut cache = GruCache {
        inputs: Vec::with_capacity(steps),
        prev_states: Vec::with_capacity(steps),
        update_gates: Vec::with_capacity(steps),
        reset_gates: Vec::with_capacity(steps),
        candidates: Vec::with_capacity(steps),
        final_state: Matrix::zeros(0, 0),
        mask: None,
        predictions: Vec::new(),
    };

    for t in 0..steps {
        let mut x_t = Matrix::zeros(batch, params.input_size());
        for (b, s) in sequences.iter().enumerate() {
            x_t.row_mut(b).copy_from_slice(s.row(t));
        }
        let mut z_t = Matrix::zeros(batch, hidden);
        let mut r_t = Matrix::zeros(batch, hidden);
        let mut cand_t = Matrix::zeros(batch, hidden);
        for b in 0..batch {
            let x = x_t.row(b);
            let hp = h.row(b).to_vec();
            let z = gate(&params.w_update, &params.u_update, &params.b_update, x, &hp, sigmoid);
            let r = gate(&params.w_reset, &params.u_reset, &params.b_reset, x, &hp, sigmoid);
            let rh: Vec<f64> = r.iter().zip(&hp).map(|(a, b)| a * b).collect();
            let cand = gate(&params.w_candidate, &params.u_candidate, &params.b_candidate, x, &rh, f64::tanh);
            z_t.row_mut(b).copy_from_slice(&z);
            r_t.row_mut(b).copy_from_slice(&r);
            cand_t.row_mut(b).copy_from_slice(&cand);
        }
        cache.inputs.push(x_t);
        cache.prev_states.push(h.clone());
        let mut next = Matrix::zeros(batch, hidden);
        for b in 0..batch {
            for j in 0..hidden {
                let v = (1.0 - z_t.get(b, j)) * h.get(b, j) + z_t.get(b, j) * cand_t.get(b, j);
                next.set(b, j, v);
            }
        }
        cache.update_gates.push(z_t);
        cache.reset_gates.push(r_t);
        cache.candidates.push(cand_t);
        h = next;
    }

    cache.final_state = h.clone();
    let mut readout_input = h;
    cache.mask = draw.mask(dropout_p, readout_input.rows(), readout_input.cols());
    if let Some(mask) = &cache.mask {
        for (v, m) in readout_input.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
    }

    let w = params.readout_weights.row(0);
    let predictions: Vec<f64> = (0..batch)
        .map(|b| {
            let pre: f64 =
                readout_input.row(b).iter().zip(w).map(|(v, wi)| v * wi).sum::<f64>()
                    + params.readout_bias;
            head.apply(pre)
        })
        .collect();
    cache.predictions = predictions.clone();
    Ok((predictions, cache))
}

/// Gradients for every GRU parameter.
#[derive(Debug, Clone)]
pub struct GruGrads {
    pub w_update: Matrix,
    pub w_reset: Matrix,
    pub w_candidate: Matrix,
    pub u_update: Matrix,
    pub u_reset: Matrix,
    pub u_candidate: Matrix,
    pub b_update: Vec<f64>,
    pub b_reset: Vec<f64>,
    pub b_candidate: Vec<f64>,
    pub readout_weights: Matrix,
    pub readout_bias: f64,
}

impl GruGrads {
    fn zeros(params: &GruParams) -> Self {
        let (h, i) = (params.hidden_size(), params.input_size());
        Self {
            w_update: Matrix::zeros(h, i),
            w_reset: Matrix::zeros(h, i),
            w_candidate: Matrix::zeros(h, i),
            u_update: Matrix::zeros(h, h),
            u_reset: Matrix::zeros(h, h),
            u_candidate: Matrix::zeros(h, h),
            b_update: vec![0.0; h],
            b_reset: vec![0.0; h],
            b_candidate: vec![0.0; h],
            readout_weights: Matrix::zeros(1, h),
            readout_bias: 0.0,
        }
    }
}

/// Backpropagation through time over the cached unrolled batch.
pub(crate) fn gru_backward(
    params: &GruParams,
    cache: &GruCache,
    d_predictions: &[f64],
    head: Head,
) -> Result<GruGrads> {
    let steps = cache.inputs.len();
    let batch = d_predictions.len();
    if steps == 0 || cache.final_state.rows() != batch {
        return Err(Error::Argument(
            "forward cache does not match the gradient batch".into(),
        ));
    }
    let hidden = params.hidden_size();
    let mut grads = GruGrads::zeros(params);

    // Through the head and readout into the final hidden state.
    let mut d_h = Matrix::zeros(batch, hidden);
    let w = params.readout_weights.row(0).to_vec();
    for b in 0..batch {
        let d_pre = d_predictions[b] * head.derivative_from_output(cache.predictions[b]);
        grads.readout_bias += d_pre;
        // Readout saw the (possibly dropped-out) final state.
        for j in 0..hidden {
            let mask = cache.mask.as_ref().map_or(1.0, |m| m.get(b, j));
            let dropped = cache.final_state.get(b, j) * mask;
            let v = grads.readout_weights.get(0, j) + d_pre * dropped;
            grads.readout_weights.set(0, j, v);
            d_h.set(b, j, d_pre * w[j] * mask);
        }
    }

    for t in (0..steps).rev() {
        let x = &cache.inputs[t];
        let h_prev = &cache.prev_states[t];
        let z = &cache.update_gates[t];
        let r = &cache.reset_gates[t];
        let cand = &cache.candidates[t];

        let mut d_h_prev = Matrix::zeros(batch, hidden);
        for b in 0..batch {
            for j in 0..hidden {
                let dh = d_h.get(b, j);
                if dh == 0.0 {
                    continue;
                }
                let zv = z.get(b, j);
                let cv = cand.get(b, j);
                let hv = h_prev.get(b, j);

                // h_t = (1 - z).h_prev + z.cand
                let d_z = dh * (cv - hv) * zv * (1.0 - zv);
                let d_cand = dh * zv * (1.0 - cv * cv);
                let carried = d_h_prev.get(b, j) + dh * (1.0 - zv);
                d_h_prev.set(b, j, carried);

                // Candidate pre-activation gradient.
                grads.b_candidate[j] += d_cand;
                for (i, &xi) in x.row(b).iter().enumerate() {
                    let v = grads.w_candidate.get(j, i) + d_cand * xi;
                    grads.w_candidate.set(j, i, v);
                }
                for k in 0..hidden {
                    let rh = r.get(b, k) * h_prev.get(b, k);
                    let v = grads.u_candidate.get(j, k) + d_cand * rh;
                    grads.u_candidate.set(j, k, v);
                }
                // d(r.h_prev) flowing back through U_candidate.
                for k in 0..hidden {
                    let d_rh = d_cand * params.u_candidate.get(j, k);
                    let rk = r.get(b, k);
                    let hk = h_prev.get(b, k);
                    let v = d_h_prev.get(b, k) + d_rh * rk;
                    d_h_prev.set(b, k, v);
                    // Reset gate pre-activation gradient.
                    let d_r = d_rh * hk * rk * (1.0 - rk);
                    grads.b_reset[k] += d_r;
                    for (i, &xi) in x.row(b).iter().enumerate() {
                        let v = grads.w_reset.get(k, i) + d_r * xi;
                        grads.w_reset.set(k, i, v);
                    }
                    for m in 0..hidden {
                        let v = grads.u_reset.get(k, m) + d_r * h_prev.get(b, m);
                        grads.u_reset.set(k, m, v);
                        let v = d_h_prev.get(b, m) + d_r * params.u_reset.get(k, m);
                        d_h_prev.set(b, m, v);
                    }
                }
                // Update gate pre-activation gradient.
                grads.b_update[j] += d_z;
                for (i, &xi) in x.row(b).iter().enumerate() {
                    let v = grads.w_update.get(j, i) + d_z * xi;
                    grads.w_update.set(j, i, v);
                }
                for k in 0..hidden {
                    let v = grads.u_update.get(j, k) + d_z * h_prev.get(b, k);
                    grads.u_update.set(j, k, v);
                    let v = d_h_prev.get(b, k) + d_z * params.u_update.get(j, k);
                    d_h_prev.set(b, k, v);
                }
            }
        }
        d_h = d_h_prev;
    }

    Ok(grads)
}
