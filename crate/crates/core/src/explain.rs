//! Model-agnostic explanations: permutation importance and partial
//! dependence. Both operate on any trained model through its prediction
//! surface and never mutate the data they are given.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::TrainedModel;
use crate::tuning::Metric;

/// Importance of one feature: the loss increase caused by shuffling it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    pub baseline_metric: f64,
    pub mean_permuted_metric: f64,
    /// `mean_permuted - baseline`; positive means the model relied on it.
    pub importance: f64,
}

/// Permutation importance for every feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub features: Vec<FeatureImportance>,
    pub n_repeats: usize,
    pub seed: u64,
}

/// Partial-dependence curve of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpCurve {
    pub feature: String,
    /// Strictly ascending grid between the observed min and max.
    pub grid: Vec<f64>,
    /// Mean prediction across all rows with the feature pinned per grid point.
    pub averaged_predictions: Vec<f64>,
}

fn loss_metric(metric: Metric, predictions: &[f64], targets: &[f64]) -> Result<f64> {
    let n = predictions.len() as f64;
    match metric {
        Metric::Mse => Ok(predictions
            .iter()
            .zip(targets)
            .map(|(&p, &y)| (p - y) * (p - y))
            .sum::<f64>()
            / n),
        Metric::CrossEntropy => {
            let mut total = 0.0;
            for (&p, &y) in predictions.iter().zip(targets) {
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
            Ok(total / n)
        }
        other => Err(Error::Argument(format!(
            "permutation importance needs a loss metric, got {other:?}"
        ))),
    }
}

/// Mean loss increase from shuffling each feature column `n_repeats` times.
///
/// The input matrix is never mutated; shuffles are seeded so repeated runs
/// produce identical reports.
pub fn permutation_importance(
    model: &TrainedModel,
    features: &Matrix,
    feature_names: &[String],
    targets: &[f64],
    metric: Metric,
    n_repeats: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    if n_repeats < 1 {
        return Err(Error::Argument("n_repeats must be >= 1".into()));
    }
    if features.rows() < 2 {
        return Err(Error::Argument(
            "permutation importance needs at least 2 rows; shuffling one row is the identity"
                .into(),
        ));
    }
    if features.rows() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs {} targets",
            features.rows(),
            targets.len()
        )));
    }
    if feature_names.len() != features.cols() {
        return Err(Error::Dimension(format!(
            "{} names for {} feature columns",
            feature_names.len(),
            features.cols()
        )));
    }

    let baseline_predictions = model.predict_matrix(features)?;
    let baseline = loss_metric(metric, &baseline_predictions, targets)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;

    let mut report = Vec::with_capacity(features.cols());
    for (c, name) in feature_names.iter().enumerate() {
        let original = features.col(c);
        let mut permuted_sum = 0.0;
        for _ in 0..n_repeats {
            let mut shuffled = original.clone();
            shuffled.shuffle(&mut rng);
            let mut scrambled = features.clone();
            scrambled.set_col(c, &shuffled);
            let predictions = model.predict_matrix(&scrambled)?;
            permuted_sum += loss_metric(metric, &predictions, targets)?;
        }
        let mean_permuted = permuted_sum / n_repeats as f64;
        report.push(FeatureImportance {
            name: name.clone(),
            baseline_metric: baseline,
            mean_permuted_metric: mean_permuted,
            importance: mean_permuted - baseline,
        });
    }
    Ok(ImportanceReport {
        features: report,
        n_repeats,
        seed,
    })
}

/// Average prediction as one feature sweeps a grid from its observed
/// minimum to its maximum.
pub fn partial_dependence(
    model: &TrainedModel,
    features: &Matrix,
    feature_names: &[String],
    feature: &str,
    grid_size: usize,
) -> Result<PdpCurve> {
    if grid_size < 2 {
        return Err(Error::Argument("grid_size must be >= 2".into()));
    }
    if feature_names.len() != features.cols() {
        return Err(Error::Dimension(format!(
            "{} names for {} feature columns",
            feature_names.len(),
            features.cols()
        )));
    }
    let column = feature_names
        .iter()
        .position(|n| n == feature)
        .ok_or_else(|| Error::Argument(format!("unknown feature `{feature}`")))?;

    let values = features.col(column);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min >= max {
        return Err(Error::DegenerateFeature {
            column,
            message: "constant feature has no dependence range".into(),
        });
    }

    let grid: Vec<f64> = (0..grid_size)
        .map(|i| min + (max - min) * i as f64 / (grid_size - 1) as f64)
        .collect();

    let mut averaged = Vec::with_capacity(grid_size);
    for &g in &grid {
        let mut pinned = features.clone();
        pinned.set_col(column, &vec![g; features.rows()]);
        let predictions = model.predict_matrix(&pinned)?;
        averaged.push(predictions.iter().sum::<f64>() / predictions.len() as f64);
    }

    Ok(PdpCurve {
        feature: feature.to_string(),
        grid,
        averaged_predictions: averaged,
    })
}

/// Importance report as CSV: name, baseline, permuted, importance.
pub fn write_importance_csv<W: Write>(report: &ImportanceReport, mut writer: W) -> Result<()> {
    let mut csv_writer = csv::Writer::from_writer(&mut writer);
    csv_writer.write_record(["feature", "baseline_metric", "mean_permuted_metric", "importance"])?;
    for f in &report.features {
        csv_writer.write_record([
            f.name.clone(),
            format!("{}", f.baseline_metric),
            format!("{}", f.mean_permuted_metric),
            format!("{}", f.importance),
        ])?;
    }
    csv_writer.flush()?;
    Ok(())
}

/// PDP curve as CSV: grid value, averaged prediction.
pub fn write_pdp_csv<W: Write>(curve: &PdpCurve, mut writer: W) -> Result<()> {
    let mut csv_writer = csv::Writer::from_writer(&mut writer);
    csv_writer.write_record(["grid", "averaged_prediction"])?;
    for (g, p) in curve.grid.iter().zip(&curve.averaged_predictions) {
        csv_writer.write_record([format!("{g}"), format!("{p}")])?;
    }
    csv_writer.flush()?;
    Ok(())
}
