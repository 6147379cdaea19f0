//! Feature scaling, PCA, input-noise regularization, and sequence windows.
//!
//! Scalers and PCA are fit on training ranges only and applied elsewhere;
//! the tuning module enforces that discipline inside each walk-forward
//! split. Fitted parameters serialize to JSON so a pipeline run can be
//! reproduced exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{symmetric_eigen, Matrix};

/// Scaling transform family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    /// Map observed [min, max] onto [0, 1].
    Unit,
    /// Map observed [min, max] onto [a, b].
    MinMax { a: f64, b: f64 },
    /// Center on the median, scale by the interquartile range.
    Robust,
    /// Center on the mean, scale by the population standard deviation.
    Zscore,
}

/// Per-column statistics captured at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub iqr: f64,
    pub mean: f64,
    pub stddev: f64,
}

/// Fitted scaler: the kind plus the statistics it needs per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub kind: ScalerKind,
    pub stats: Vec<ColumnStats>,
}

/// Quantile by linear interpolation on the sorted sample at rank `(n-1)p`.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = (n - 1) as f64 * p;
    let lower = rank.floor() as usize;
    let frac = rank - lower as f64;
    if lower + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lower] + frac * (sorted[lower + 1] - sorted[lower])
    }
}

fn column_stats(column: &[f64]) -> ColumnStats {
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let variance = column.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = column.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ColumnStats {
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        median: quantile(&sorted, 0.5),
        iqr: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
        mean,
        stddev: variance.sqrt(),
    }
}

/// Fit a scaler on the columns of `data`.
pub fn fit_scaler(data: &Matrix, kind: ScalerKind) -> Result<ScalerParams> {
    if data.rows() < 2 {
        return Err(Error::Argument(
            "fit_scaler needs at least 2 rows".into(),
        ));
    }
    if let ScalerKind::MinMax { a, b } = kind {
        if b <= a {
            return Err(Error::Argument(format!(
                "min-max interval requires b > a, got [{a}, {b}]"
            )));
        }
    }
    let mut stats = Vec::with_capacity(data.cols());
    for c in 0..data.cols() {
        let column = data.col(c);
        let s = column_stats(&column);
        match kind {
            ScalerKind::Unit | ScalerKind::MinMax { .. } if s.max <= s.min => {
                return Err(Error::DegenerateFeature {
                    column: c,
                    message: "constant column cannot be range-scaled".into(),
                });
            }
            ScalerKind::Zscore if s.stddev <= 0.0 => {
                return Err(Error::DegenerateFeature {
                    column: c,
                    message: "zero standard deviation".into(),
                });
            }
            ScalerKind::Robust if s.iqr <= 0.0 => {
                return Err(Error::DegenerateFeature {
                    column: c,
                    message: "zero interquartile range".into(),
                });
            }
            _ => {}
        }
        stats.push(s);
    }
    Ok(ScalerParams { kind, stats })
}

fn scale_value(kind: ScalerKind, s: &ColumnStats, x: f64) -> f64 {
    match kind {
        ScalerKind::Unit => (x - s.min) / (s.max - s.min),
        ScalerKind::MinMax { a, b } => a + (x - s.min) / (s.max - s.min) * (b - a),
        ScalerKind::Robust => (x - s.median) / s.iqr,
        ScalerKind::Zscore => (x - s.mean) / s.stddev,
    }
}

fn unscale_value(kind: ScalerKind, s: &ColumnStats, y: f64) -> f64 {
    match kind {
        ScalerKind::Unit => s.min + y * (s.max - s.min),
        ScalerKind::MinMax { a, b } => s.min + (y - a) / (b - a) * (s.max - s.min),
        ScalerKind::Robust => s.median + y * s.iqr,
        ScalerKind::Zscore => s.mean + y * s.stddev,
    }
}

/// Apply a fitted scaler elementwise.
pub fn apply_scaler(params: &ScalerParams, data: &Matrix) -> Result<Matrix> {
    if data.cols() != params.stats.len() {
        return Err(Error::Dimension(format!(
            "scaler fit on {} features, data has {}",
            params.stats.len(),
            data.cols()
        )));
    }
    let mut out = data.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (c, s) in params.stats.iter().enumerate() {
            row[c] = scale_value(params.kind, s, row[c]);
        }
    }
    Ok(out)
}

/// Exact algebraic inverse of [`apply_scaler`].
pub fn invert_scaler(params: &ScalerParams, data: &Matrix) -> Result<Matrix> {
    if data.cols() != params.stats.len() {
        return Err(Error::Dimension(format!(
            "scaler fit on {} features, data has {}",
            params.stats.len(),
            data.cols()
        )));
    }
    let mut out = data.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (c, s) in params.stats.iter().enumerate() {
            row[c] = unscale_value(params.kind, s, row[c]);
        }
    }
    Ok(out)
}

/// Principal components of mean-centered data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// One orthonormal component per row (n_components x n_features).
    pub components: Matrix,
    pub feature_means: Vec<f64>,
    /// Sample variances along each component, nonincreasing.
    pub explained_variance: Vec<f64>,
}

/// Fit PCA by eigendecomposition of the feature covariance matrix.
pub fn fit_pca(data: &Matrix, n_components: usize) -> Result<PcaModel> {
    let (n, d) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::Argument("fit_pca needs at least 2 rows".into()));
    }
    if n_components == 0 || n_components > d.min(n - 1) {
        return Err(Error::Argument(format!(
            "n_components {} out of range 1..={}",
            n_components,
            d.min(n - 1)
        )));
    }

    let means: Vec<f64> = (0..d)
        .map(|c| data.col(c).iter().sum::<f64>() / n as f64)
        .collect();

    let mut covariance = Matrix::zeros(d, d);
    for row in data.iter_rows() {
        for i in 0..d {
            let xi = row[i] - means[i];
            for j in i..d {
                let xj = row[j] - means[j];
                let v = covariance.get(i, j) + xi * xj;
                covariance.set(i, j, v);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = covariance.get(i, j) / (n - 1) as f64;
            covariance.set(i, j, v);
            covariance.set(j, i, v);
        }
    }

    let (eigenvalues, eigenvectors) = symmetric_eigen(&covariance)?;
    let mut components = Matrix::zeros(n_components, d);
    for k in 0..n_components {
        components.row_mut(k).copy_from_slice(eigenvectors.row(k));
    }
    Ok(PcaModel {
        components,
        feature_means: means,
        explained_variance: eigenvalues[..n_components].to_vec(),
    })
}

/// Project centered rows onto the principal components.
pub fn pca_transform(model: &PcaModel, data: &Matrix) -> Result<Matrix> {
    if data.cols() != model.feature_means.len() {
        return Err(Error::Dimension(format!(
            "PCA fit on {} features, data has {}",
            model.feature_means.len(),
            data.cols()
        )));
    }
    let k = model.components.rows();
    let mut out = Matrix::zeros(data.rows(), k);
    for (r, row) in data.iter_rows().enumerate() {
        for c in 0..k {
            let component = model.components.row(c);
            let mut dot = 0.0;
            for (j, &x) in row.iter().enumerate() {
                dot += (x - model.feature_means[j]) * component[j];
            }
            out.set(r, c, dot);
        }
    }
    Ok(out)
}

/// Map projected rows back into feature space.
pub fn pca_inverse_transform(model: &PcaModel, projected: &Matrix) -> Result<Matrix> {
    if projected.cols() != model.components.rows() {
        return Err(Error::Dimension(format!(
            "projection has {} columns, model has {} components",
            projected.cols(),
            model.components.rows()
        )));
    }
    let d = model.feature_means.len();
    let mut out = Matrix::zeros(projected.rows(), d);
    for (r, row) in projected.iter_rows().enumerate() {
        for j in 0..d {
            let mut x = model.feature_means[j];
            for (c, &z) in row.iter().enumerate() {
                x += z * model.components.get(c, j);
            }
            out.set(r, j, x);
        }
    }
    Ok(out)
}

/// Zero-mean Gaussian input noise, deterministic given the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub seed: u64,
}

/// Add seeded Gaussian noise to every cell.
pub fn add_input_noise(data: &Matrix, config: &NoiseConfig) -> Result<Matrix> {
    if config.sigma < 0.0 {
        return Err(Error::Argument("noise sigma must be >= 0".into()));
    }
    if config.sigma == 0.0 {
        return Ok(data.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.sigma)
        .map_err(|e| Error::Argument(format!("bad noise distribution: {e}")))?;
    let mut out = data.clone();
    for cell in out.data_mut() {
        *cell += normal.sample(&mut rng);
    }
    Ok(out)
}

/// Sliding windows of `length` consecutive rows.
///
/// Sample `i` covers rows `[i, i + length)`; its prediction target belongs
/// to the last row, index `i + length - 1`.
pub fn window(features: &Matrix, length: usize) -> Result<Vec<Matrix>> {
    if length == 0 {
        return Err(Error::Argument("window length must be >= 1".into()));
    }
    if features.rows() < length {
        return Err(Error::Argument(format!(
            "cannot cut windows of {} from {} rows",
            length,
            features.rows()
        )));
    }
    Ok((0..=features.rows() - length)
        .map(|i| features.slice_rows(i..i + length))
        .collect())
}
