//! Batch normalization: re-centering and re-scaling of layer activations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Learnable scale/shift plus running statistics for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// Guards the denominator; 1e-8 by default.
    pub epsilon: f64,
    /// Exponential moving average of batch means, captured during training.
    pub running_mean: Vec<f64>,
    /// Exponential moving average of batch variances.
    pub running_var: Vec<f64>,
}

impl BatchNormParams {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            epsilon: 1e-8,
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    /// Fold a batch's statistics into the running averages.
    pub fn update_running(&mut self, batch_mean: &[f64], batch_var: &[f64], momentum: f64) {
        for j in 0..self.running_mean.len() {
            self.running_mean[j] = (1.0 - momentum) * self.running_mean[j] + momentum * batch_mean[j];
            self.running_var[j] = (1.0 - momentum) * self.running_var[j] + momentum * batch_var[j];
        }
    }
}

/// Whether normalization uses the current batch or the running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    /// `(h - mean) / sqrt(var + eps)` before the gamma/beta transform.
    pub normalized: Matrix,
    /// Per-unit `sqrt(var + eps)`.
    pub std: Vec<f64>,
    /// Batch statistics; present only in train mode.
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Normalize a batch of activations: `gamma * h_bn + beta`.
///
/// Train mode uses the batch mean and population variance; infer mode uses
/// the running statistics captured during training.
pub fn batch_norm_forward(
    h: &Matrix,
    params: &BatchNormParams,
    mode: BnMode,
) -> Result<(Matrix, BnCache)> {
    let (m, width) = (h.rows(), h.cols());
    if width != params.gamma.len() {
        return Err(Error::Dimension(format!(
            "batch norm over {} units got {} columns",
            params.gamma.len(),
            width
        )));
    }
    if params.epsilon < 0.0 {
        return Err(Error::Argument("batch norm epsilon must be >= 0".into()));
    }

    let (mean, var) = match mode {
        BnMode::Train => {
            if m < 2 {
                return Err(Error::Argument(format!(
                    "batch norm training needs a batch of at least 2, got {m}"
                )));
            }
            let mut mean = vec![0.0; width];
            for row in h.iter_rows() {
                for (j, &v) in row.iter().enumerate() {
                    mean[j] += v;
                }
            }
            for v in mean.iter_mut() {
                *v /= m as f64;
            }
            let mut var = vec![0.0; width];
            for row in h.iter_rows() {
                for (j, &v) in row.iter().enumerate() {
                    var[j] += (v - mean[j]).powi(2);
                }
            }
            for v in var.iter_mut() {
                *v /= m as f64;
            }
            (mean, var)
        }
        BnMode::Infer => (params.running_mean.clone(), params.running_var.clone()),
    };

    let mut std = vec![0.0; width];
    for j in 0..width {
        let s = (var[j] + params.epsilon).sqrt();
        if s <= 0.0 {
            return Err(Error::Domain(format!(
                "batch norm unit {j} has zero variance and zero epsilon"
            )));
        }
        std[j] = s;
    }

    let mut normalized = Matrix::zeros(m, width);
    let mut output = Matrix::zeros(m, width);
    for r in 0..m {
        for j in 0..width {
            let n = (h.get(r, j) - mean[j]) / std[j];
            normalized.set(r, j, n);
            output.set(r, j, params.gamma[j] * n + params.beta[j]);
        }
    }

    let batch_stats = match mode {
        BnMode::Train => Some((mean, var)),
        BnMode::Infer => None,
    };
    Ok((
        output,
        BnCache {
            normalized,
            std,
            batch_stats,
        },
    ))
}

/// Gradient of the batch-norm output w.r.t. gamma, beta, and its input.
pub(crate) fn batch_norm_backward(
    params: &BatchNormParams,
    cache: &BnCache,
    d_out: &Matrix,
) -> (Vec<f64>, Vec<f64>, Matrix) {
    let (m, width) = (d_out.rows(), d_out.cols());
    let mut d_gamma = vec![0.0; width];
    let mut d_beta = vec![0.0; width];
    for r in 0..m {
        for j in 0..width {
            d_beta[j] += d_out.get(r, j);
            d_gamma[j] += d_out.get(r, j) * cache.normalized.get(r, j);
        }
    }

    let mut d_input = Matrix::zeros(m, width);
    match &cache.batch_stats {
        Some(_) => {
            // Train mode: the batch statistics depend on every row.
            for j in 0..width {
                let mut sum_dxhat = 0.0;
                let mut sum_dxhat_xhat = 0.0;
                for r in 0..m {
                    let dxhat = d_out.get(r, j) * params.gamma[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * cache.normalized.get(r, j);
                }
                for r in 0..m {
                    let dxhat = d_out.get(r, j) * params.gamma[j];
                    let v = (m as f64 * dxhat
                        - sum_dxhat
                        - cache.normalized.get(r, j) * sum_dxhat_xhat)
                        / (m as f64 * cache.std[j]);
                    d_input.set(r, j, v);
                }
            }
        }
        None => {
            // Infer mode: running statistics are constants.
            for r in 0..m {
                for j in 0..width {
                    d_input.set(r, j, d_out.get(r, j) * params.gamma[j] / cache.std[j]);
                }
            }
        }
    }
    (d_gamma, d_beta, d_input)
}
