//! Dense feed-forward parameters and backpropagation.
//!
//! Linear and logistic models are the zero-hidden-layer special case of the
//! same machinery.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::batchnorm::{batch_norm_backward, batch_norm_forward, BatchNormParams, BnCache, BnMode};
use super::{Activation, DropoutDraw, Head};

/// One dense layer: `out = weights * input + biases`, row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
    /// Present on hidden layers when the model was built with batch norm.
    pub batch_norm: Option<BatchNormParams>,
}

/// Feed-forward parameters; the last layer is the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weights.rows() * l.weights.cols()
                    + l.biases.len()
                    + l.batch_norm.as_ref().map_or(0, |bn| bn.gamma.len() * 2)
            })
            .sum()
    }
}

/// Per-layer intermediates kept by the training forward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    /// Input to each layer (batch x fan_in).
    layer_inputs: Vec<Matrix>,
    /// Pre-activation after batch norm where applicable.
    pre_activations: Vec<Matrix>,
    /// Batch-norm intermediates per hidden layer.
    bn_caches: Vec<Option<BnCache>>,
    /// Post-activation values before dropout.
    activations: Vec<Matrix>,
    /// Inverted-dropout masks (entries 0 or 1/(1-p)).
    masks: Vec<Option<Matrix>>,
    /// Head outputs.
    pub predictions: Vec<f64>,
}

impl DenseCache {
    /// Batch statistics observed by each batch-norm layer, for running-stat
    /// updates during training.
    pub(crate) fn bn_batch_stats(&self) -> Vec<Option<(Vec<f64>, Vec<f64>)>> {
        self.bn_caches
            .iter()
            .map(|c| c.as_ref().and_then(|c| c.batch_stats.clone()))
            .collect()
    }
}

fn affine(layer: &DenseLayer, input: &Matrix) -> Result<Matrix> {
    if input.cols() != layer.weights.cols() {
        return Err(Error::Dimension(format!(
            "layer expects {} inputs, got {}",
            layer.weights.cols(),
            input.cols()
        )));
    }
    let mut out = Matrix::zeros(input.rows(), layer.weights.rows());
    for (r, row) in input.iter_rows().enumerate() {
        for u in 0..layer.weights.rows() {
            let w = layer.weights.row(u);
            let mut z = layer.biases[u];
            for (x, wi) in row.iter().zip(w) {
                z += x * wi;
            }
            out.set(r, u, z);
        }
    }
    Ok(out)
}

/// Forward pass over a batch of rows.
///
/// In train mode, hidden activations are dropped out with probability
/// `dropout_p` and survivors are scaled by `1/(1-p)` so inference needs no
/// rescaling; batch norm uses batch statistics.
pub(crate) fn dense_forward(
    params: &MlpParams,
    batch: &Matrix,
    activation: Activation,
    head: Head,
    dropout_p: f64,
    draw: &mut DropoutDraw,
) -> Result<(Vec<f64>, DenseCache)> {
    if batch.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite input to forward pass".into()));
    }
    let bn_mode = if draw.is_train() { BnMode::Train } else { BnMode::Infer };
    let n_layers = params.layers.len();
    let mut cache = DenseCache {
        layer_inputs: Vec::with_capacity(n_layers),
        pre_activations: Vec::with_capacity(n_layers),
        bn_caches: Vec::with_capacity(n_layers),
        activations: Vec::with_capacity(n_layers),
        masks: Vec::with_capacity(n_layers),
        predictions: Vec::new(),
    };

    let mut current = batch.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let is_output = l == n_layers - 1;
        cache.layer_inputs.push(current.clone());
        let mut z = affine(layer, &current)?;

        let bn_cache = if let (false, Some(bn)) = (is_output, layer.batch_norm.as_ref()) {
            let (normalized, c) = batch_norm_forward(&z, bn, bn_mode)?;
            z = normalized;
            Some(c)
        } else {
            None
        };
        cache.bn_caches.push(bn_cache);
        cache.pre_activations.push(z.clone());

        if is_output {
            cache.activations.push(z.clone());
            cache.masks.push(None);
            cache.predictions = (0..z.rows()).map(|r| head.apply(z.get(r, 0))).collect();
        } else {
            let mut a = z;
            for v in a.data_mut() {
                *v = activation.apply(*v);
            }
            cache.activations.push(a.clone());
            let mask = draw.mask(dropout_p, a.rows(), a.cols());
            if let Some(mask) = &mask {
                for (v, m) in a.data_mut().iter_mut().zip(mask.data()) {
                    *v *= m;
                }
            }
            cache.masks.push(mask);
            current = a;
        }
    }

    let predictions = cache.predictions.clone();
    Ok((predictions, cache))
}

/// Gradients for one dense layer.
#[derive(Debug, Clone)]
pub struct DenseLayerGrads {
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

/// Gradients for every dense layer, index-aligned with the parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<DenseLayerGrads>,
}

/// Backpropagate `d_loss/d_prediction` through the cached forward pass.
///
/// Returns gradients of the data term only; regularization gradients are
/// layered on by the caller.
pub(crate) fn dense_backward(
    params: &MlpParams,
    cache: &DenseCache,
    d_predictions: &[f64],
    activation: Activation,
    head: Head,
) -> Result<MlpGrads> {
    let n_layers = params.layers.len();
    if cache.layer_inputs.len() != n_layers {
        return Err(Error::Argument(
            "forward cache does not match the model".into(),
        ));
    }
    let batch = cache.layer_inputs[0].rows();
    if d_predictions.len() != batch {
        return Err(Error::Dimension(format!(
            "{} prediction gradients for a batch of {batch}",
            d_predictions.len()
        )));
    }

    let mut grads: Vec<DenseLayerGrads> = Vec::with_capacity(n_layers);

    // Output layer: chain through the head.
    let mut d_z = Matrix::zeros(batch, 1);
    for r in 0..batch {
        let y = cache.predictions[r];
        d_z.set(r, 0, d_predictions[r] * head.derivative_from_output(y));
    }

    for l in (0..n_layers).rev() {
        let layer = &params.layers[l];
        let input = &cache.layer_inputs[l];
        let (out_w, in_w) = (layer.weights.rows(), layer.weights.cols());

        // d_z currently holds dL/d(pre-activation after batch norm).
        let (d_affine, d_gamma, d_beta) = match (&cache.bn_caches[l], layer.batch_norm.as_ref()) {
            (Some(bn_cache), Some(bn)) => {
                let (dg, db, dx) = batch_norm_backward(bn, bn_cache, &d_z);
                (dx, Some(dg), Some(db))
            }
            _ => (d_z.clone(), None, None),
        };

        let mut d_weights = Matrix::zeros(out_w, in_w);
        let mut d_biases = vec![0.0; out_w];
        for r in 0..batch {
            for u in 0..out_w {
                let g = d_affine.get(r, u);
                d_biases[u] += g;
                let row = input.row(r);
                for (i, &x) in row.iter().enumerate() {
                    let v = d_weights.get(u, i) + g * x;
                    d_weights.set(u, i, v);
                }
            }
        }
        grads.push(DenseLayerGrads {
            weights: d_weights,
            biases: d_biases,
            gamma: d_gamma,
            beta: d_beta,
        });

        if l > 0 {
            // Propagate to the previous layer's dropped-out activation.
            let mut d_prev = Matrix::zeros(batch, in_w);
            for r in 0..batch {
                for u in 0..out_w {
                    let g = d_affine.get(r, u);
                    if g == 0.0 {
                        continue;
                    }
                    let w = params.layers[l].weights.row(u);
                    for i in 0..in_w {
                        let v = d_prev.get(r, i) + g * w[i];
                        d_prev.set(r, i, v);
                    }
                }
            }
            // Through the dropout mask.
            if let Some(mask) = &cache.masks[l - 1] {
                for (v, m) in d_prev.data_mut().iter_mut().zip(mask.data()) {
                    *v *= m;
                }
            }
            // Through the hidden activation.
            let act = &cache.activations[l - 1];
            let pre = &cache.pre_activations[l - 1];
            for r in 0..batch {
                for i in 0..in_w {
                    let d = activation.derivative(pre.get(r, i), act.get(r, i));
                    let v = d_prev.get(r, i) * d;
                    d_prev.set(r, i, v);
                }
            }
            d_z = d_prev;
        }
    }

    grads.reverse();
    Ok(MlpGrads { layers: grads })
}
