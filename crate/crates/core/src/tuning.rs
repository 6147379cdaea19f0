//! Hyperparameter search under walk-forward validation.
//!
//! Searches never see data directly: they call an evaluator with a
//! candidate assignment (and an epoch budget) and receive a score where
//! higher is always better. [`SplitEvaluator`] is the concrete evaluator
//! that trains a fresh model per walk-forward split, fitting scalers and
//! PCA inside each split's training range only so nothing leaks backward
//! in time; loss-type metrics are negated so the maximization convention
//! holds everywhere.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::{self, Dataset, ModelConfig, RegularizationConfig, TrainConfig};
use crate::preprocess::{apply_scaler, fit_pca, fit_scaler, pca_transform, ScalerKind};

/// One axis of the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    /// Explicit candidate values (JSON scalars).
    Discrete { name: String, values: Vec<Value> },
    /// Continuous interval, sampled uniformly on a linear or log scale.
    Continuous {
        name: String,
        low: f64,
        high: f64,
        log_scale: bool,
    },
}

impl Dimension {
    pub fn name(&self) -> &str {
        match self {
            Dimension::Discrete { name, .. } => name,
            Dimension::Continuous { name, .. } => name,
        }
    }
}

/// Ordered list of search axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dimensions: Vec<Dimension>,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for dim in &self.dimensions {
            match dim {
                Dimension::Discrete { name, values } => {
                    if values.is_empty() {
                        return Err(Error::Config(format!(
                            "axis `{name}` has no candidate values"
                        )));
                    }
                }
                Dimension::Continuous {
                    name, low, high, log_scale,
                } => {
                    if low >= high {
                        return Err(Error::Config(format!(
                            "axis `{name}` needs low < high"
                        )));
                    }
                    if *log_scale && *low <= 0.0 {
                        return Err(Error::Config(format!(
                            "log-scale axis `{name}` needs low > 0"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn all_discrete(&self) -> bool {
        self.dimensions
            .iter()
            .all(|d| matches!(d, Dimension::Discrete { .. }))
    }
}

/// A hyperparameter assignment: axis name to chosen value.
pub type Assignment = BTreeMap<String, Value>;

/// Trial outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Pruned,
    Failed,
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub assignment: Assignment,
    /// Training epochs granted to this evaluation.
    pub budget_used: usize,
    /// Validation score, higher is better; loss metrics arrive negated.
    pub score: f64,
    pub status: TrialStatus,
}

/// Search result: the winning trial plus the full ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: Trial,
    pub trials: Vec<Trial>,
}

/// Anything that can score an assignment under an epoch budget.
///
/// Scores must be pure functions of `(assignment, budget)`: searches may
/// re-evaluate and expect identical results.
pub trait Evaluator {
    fn evaluate(&self, assignment: &Assignment, budget: usize) -> Result<f64>;

    /// Budget granted to full-length evaluations (grid/greedy/random).
    fn default_budget(&self) -> usize {
        0
    }
}

impl<F> Evaluator for F
where
    F: Fn(&Assignment, usize) -> Result<f64>,
{
    fn evaluate(&self, assignment: &Assignment, budget: usize) -> Result<f64> {
        self(assignment, budget)
    }
}

/// Calendar unit for walk-forward splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    Year,
    Month,
    /// Blocks of `n` consecutive rows; a shorter final block still counts
    /// as a unit.
    FixedDays(u32),
}

/// Walk-forward configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkForwardConfig {
    pub split_unit: SplitUnit,
    pub initial_train_units: usize,
    pub test_units: usize,
    /// Keep only the most recent `max_splits` splits when set.
    pub max_splits: Option<usize>,
    /// Expanding (anchored) train windows by default; rolling otherwise.
    pub expanding: bool,
}

impl Default for WalkForwardConfig {
    fn default() -> Self {
        Self {
            split_unit: SplitUnit::Year,
            initial_train_units: 2,
            test_units: 1,
            max_splits: None,
            expanding: true,
        }
    }
}

/// Index ranges of one walk-forward split; `test` always follows `train`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
}

/// Cut expanding train/test splits along calendar units.
///
/// Split `k` trains on everything through unit `initial_train_units + k - 1`
/// and tests on the following `test_units` units, so every test index is
/// strictly later than every train index.
pub fn walk_forward_splits(dates: &[NaiveDate], config: &WalkForwardConfig) -> Result<Vec<Split>> {
    if config.initial_train_units < 1 || config.test_units < 1 {
        return Err(Error::Config(
            "walk-forward units must be >= 1".into(),
        ));
    }
    if dates.is_empty() {
        return Err(Error::Argument("no dates to split".into()));
    }

    // Boundaries of consecutive calendar units, as row indices.
    let mut unit_starts: Vec<usize> = vec![0];
    match config.split_unit {
        SplitUnit::Year => {
            for i in 1..dates.len() {
                if dates[i].year() != dates[i - 1].year() {
                    unit_starts.push(i);
                }
            }
        }
        SplitUnit::Month => {
            for i in 1..dates.len() {
                if (dates[i].year(), dates[i].month()) != (dates[i - 1].year(), dates[i - 1].month())
                {
                    unit_starts.push(i);
                }
            }
        }
        SplitUnit::FixedDays(n) => {
            if n == 0 {
                return Err(Error::Config("fixed_days unit must be >= 1".into()));
            }
            let mut i = n as usize;
            while i < dates.len() {
                unit_starts.push(i);
                i += n as usize;
            }
        }
    }
    unit_starts.push(dates.len());
    let units = unit_starts.len() - 1;

    if units < config.initial_train_units + config.test_units {
        return Err(Error::Argument(format!(
            "{} units cannot host {} train + {} test",
            units, config.initial_train_units, config.test_units
        )));
    }

    let mut splits = Vec::new();
    for k in 0..=(units - config.initial_train_units - config.test_units) {
        let train_end_unit = config.initial_train_units + k;
        let test_end_unit = train_end_unit + config.test_units;
        let train_start = if config.expanding {
            0
        } else {
            unit_starts[train_end_unit - config.initial_train_units]
        };
        splits.push(Split {
            train: train_start..unit_starts[train_end_unit],
            test: unit_starts[train_end_unit]..unit_starts[test_end_unit],
        });
    }

    if let Some(max) = config.max_splits {
        if splits.len() > max {
            splits.drain(0..splits.len() - max);
        }
    }
    Ok(splits)
}

/// Random k-fold partition for non-temporal data.
///
/// Fold `f` tests on its block of the shuffled indices and trains on the
/// rest. This is a structural utility only; time-series evaluation must
/// use [`walk_forward_splits`], since a random partition lets training
/// rows postdate test rows.
pub fn kfold_splits(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::Argument(format!("k must be in 2..={n}, got {k}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0usize;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let test: Vec<usize> = order[start..start + len].to_vec();
        let train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + len..])
            .copied()
            .collect();
        folds.push((train, test));
        start += len;
    }
    Ok(folds)
}

/// Validation metric computed on each split's test range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    CrossEntropy,
    Mse,
}

impl Metric {
    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Accuracy | Metric::Precision | Metric::Recall)
    }
}

/// Mean and per-split scores from [`evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutcome {
    pub mean_score: f64,
    pub split_scores: Vec<f64>,
}

/// Preprocessing applied inside each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPreprocess {
    pub scaler: Option<ScalerKind>,
    pub pca_components: Option<usize>,
    /// Window length for sequence (GRU) models.
    pub window: Option<usize>,
}

impl Default for SplitPreprocess {
    fn default() -> Self {
        Self {
            scaler: Some(ScalerKind::Zscore),
            pca_components: None,
            window: None,
        }
    }
}

/// Walk-forward evaluation dataset plus the base pipeline configuration.
#[derive(Debug, Clone)]
pub struct SplitEvaluator {
    pub features: Matrix,
    pub targets: Vec<f64>,
    pub splits: Vec<Split>,
    pub metric: Metric,
    pub preprocess: SplitPreprocess,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub regularization: RegularizationConfig,
}

fn metric_value(metric: Metric, predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::Dimension("empty or mismatched evaluation".into()));
    }
    let n = predictions.len() as f64;
    Ok(match metric {
        Metric::Mse => {
            predictions
                .iter()
                .zip(targets)
                .map(|(&p, &y)| (p - y) * (p - y))
                .sum::<f64>()
                / n
        }
        Metric::CrossEntropy => {
            let mut total = 0.0;
            for (&p, &y) in predictions.iter().zip(targets) {
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
            total / n
        }
        Metric::Accuracy => {
            predictions
                .iter()
                .zip(targets)
                .filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5))
                .count() as f64
                / n
        }
        Metric::Precision | Metric::Recall => {
            let mut tp = 0.0;
            let mut fp = 0.0;
            let mut fn_ = 0.0;
            for (&p, &y) in predictions.iter().zip(targets) {
                let predicted = p >= 0.5;
                let actual = y >= 0.5;
                match (predicted, actual) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fn_ += 1.0,
                    _ => {}
                }
            }
            let denom = if metric == Metric::Precision { tp + fp } else { tp + fn_ };
            if denom == 0.0 {
                0.0
            } else {
                tp / denom
            }
        }
    })
}

impl SplitEvaluator {
    /// Score one split: fit preprocessing on the training range, train a
    /// fresh model, and compute the metric on the test range.
    fn evaluate_split(
        &self,
        split: &Split,
        model: &ModelConfig,
        train: &TrainConfig,
        reg: &RegularizationConfig,
    ) -> Result<f64> {
        // Fit scalers strictly inside the training range.
        let train_slice = self.features.slice_rows(split.train.clone());
        let scaled_all = match self.preprocess.scaler {
            Some(kind) => {
                let params = fit_scaler(&train_slice, kind)?;
                apply_scaler(&params, &self.features)?
            }
            None => self.features.clone(),
        };
        let reduced_all = match self.preprocess.pca_components {
            Some(k) => {
                let scaled_train = scaled_all.slice_rows(split.train.clone());
                let pca = fit_pca(&scaled_train, k)?;
                pca_transform(&pca, &scaled_all)?
            }
            None => scaled_all,
        };

        let (dataset, test_dataset) = self.build_datasets(&reduced_all, split)?;
        let trained = models::train(model, &dataset, train, reg)?;

        let (predictions, targets): (Vec<f64>, Vec<f64>) = match &test_dataset {
            Dataset::Rows { features, targets } => {
                (trained.predict_matrix(features)?, targets.clone())
            }
            Dataset::Sequences { samples, targets } => {
                let mut preds = Vec::with_capacity(samples.len());
                for s in samples {
                    preds.push(trained.forward_sample(
                        &models::Sample::Sequence(s),
                        models::ForwardMode::Infer,
                    )?);
                }
                (preds, targets.clone())
            }
        };
        metric_value(self.metric, &predictions, &targets)
    }

    /// Train dataset over the split's train range and test dataset over its
    /// test range. Sequence datasets let test windows reach back into
    /// training rows for history; targets always come from the test range.
    fn build_datasets(&self, features: &Matrix, split: &Split) -> Result<(Dataset, Dataset)> {
        match self.preprocess.window {
            None => Ok((
                Dataset::Rows {
                    features: features.slice_rows(split.train.clone()),
                    targets: self.targets[split.train.clone()].to_vec(),
                },
                Dataset::Rows {
                    features: features.slice_rows(split.test.clone()),
                    targets: self.targets[split.test.clone()].to_vec(),
                },
            )),
            Some(window) => {
                if window < 1 {
                    return Err(Error::Config("window must be >= 1".into()));
                }
                let build = |range: std::ops::Range<usize>| -> Result<Dataset> {
                    let mut samples = Vec::new();
                    let mut targets = Vec::new();
                    for end in range {
                        // Window of rows ending at `end` (inclusive).
                        if end + 1 >= window {
                            let start = end + 1 - window;
                            samples.push(features.slice_rows(start..end + 1));
                            targets.push(self.targets[end]);
                        }
                    }
                    if samples.is_empty() {
                        return Err(Error::Argument(
                            "window leaves no usable samples in a split range".into(),
                        ));
                    }
                    Ok(Dataset::Sequences { samples, targets })
                };
                Ok((build(split.train.clone())?, build(split.test.clone())?))
            }
        }
    }

    fn apply_assignment(
        &self,
        assignment: &Assignment,
    ) -> Result<(ModelConfig, TrainConfig, RegularizationConfig)> {
        let mut model = self.model.clone();
        let mut train = self.train.clone();
        let mut reg = self.regularization;
        for (name, value) in assignment {
            let as_f64 = value.as_f64();
            let as_usize = value.as_u64().map(|v| v as usize);
            match name.as_str() {
                "learning_rate" => {
                    train.learning_rate = as_f64
                        .ok_or_else(|| Error::Config("learning_rate must be numeric".into()))?
                }
                "batch_size" => {
                    train.batch_size = as_usize
                        .ok_or_else(|| Error::Config("batch_size must be an integer".into()))?
                }
                "max_epochs" => {
                    train.max_epochs = as_usize
                        .ok_or_else(|| Error::Config("max_epochs must be an integer".into()))?
                }
                "lambda" => {
                    reg.lambda = as_f64
                        .ok_or_else(|| Error::Config("lambda must be numeric".into()))?
                }
                "mix" => {
                    reg.mix =
                        as_f64.ok_or_else(|| Error::Config("mix must be numeric".into()))?
                }
                "patience" => {
                    reg.early_stopping_patience = as_usize
                        .ok_or_else(|| Error::Config("patience must be an integer".into()))?
                }
                "dropout_p" => {
                    model.dropout_p = as_f64
                        .ok_or_else(|| Error::Config("dropout_p must be numeric".into()))?
                }
                "hidden_size" => {
                    let size = as_usize
                        .ok_or_else(|| Error::Config("hidden_size must be an integer".into()))?;
                    match &mut model.architecture {
                        models::Architecture::Mlp { layer_sizes, .. } => {
                            *layer_sizes = vec![size];
                        }
                        models::Architecture::Gru { hidden_size } => *hidden_size = size,
                        _ => {
                            return Err(Error::Config(
                                "hidden_size only applies to mlp/gru architectures".into(),
                            ))
                        }
                    }
                }
                "activation" => {
                    let text = value
                        .as_str()
                        .ok_or_else(|| Error::Config("activation must be a string".into()))?;
                    let parsed = match text {
                        "sigmoid" => models::Activation::Sigmoid,
                        "tanh" => models::Activation::Tanh,
                        "relu" => models::Activation::Relu,
                        other => {
                            return Err(Error::Config(format!(
                                "unknown activation `{other}`"
                            )))
                        }
                    };
                    match &mut model.architecture {
                        models::Architecture::Mlp { activation, .. } => *activation = parsed,
                        _ => {
                            return Err(Error::Config(
                                "activation only applies to the mlp architecture".into(),
                            ))
                        }
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown hyperparameter `{other}` in search space"
                    )))
                }
            }
        }
        Ok((model, train, reg))
    }
}

impl Evaluator for SplitEvaluator {
    fn evaluate(&self, assignment: &Assignment, budget: usize) -> Result<f64> {
        let outcome = evaluate(assignment, self, budget)?;
        let oriented = if self.metric.higher_is_better() {
            outcome.mean_score
        } else {
            -outcome.mean_score
        };
        Ok(oriented)
    }

    fn default_budget(&self) -> usize {
        self.train.max_epochs
    }
}

/// Train one model per split and average the metric.
///
/// `budget` caps the training epochs (0 means the configured maximum);
/// scores are the raw metric values, not negated.
pub fn evaluate(
    assignment: &Assignment,
    evaluator: &SplitEvaluator,
    budget: usize,
) -> Result<EvaluationOutcome> {
    if evaluator.splits.is_empty() {
        return Err(Error::Argument("no splits to evaluate".into()));
    }
    let (model, mut train, reg) = evaluator.apply_assignment(assignment)?;
    if budget > 0 {
        train.max_epochs = budget;
    }
    let mut split_scores = Vec::with_capacity(evaluator.splits.len());
    for split in &evaluator.splits {
        let score = evaluator
            .evaluate_split(split, &model, &train, &reg)
            .map_err(|e| Error::Data(format!("split evaluation failed: {e}")))?;
        split_scores.push(score);
    }
    let mean_score = split_scores.iter().sum::<f64>() / split_scores.len() as f64;
    Ok(EvaluationOutcome {
        mean_score,
        split_scores,
    })
}

fn best_of(trials: &[Trial]) -> Result<Trial> {
    trials
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .max_by(|a, b| {
            a.score
                .partial_cmp(&b.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                // Ties go to the lower trial id.
                .then(b.id.cmp(&a.id))
        })
        .cloned()
        .ok_or_else(|| Error::Data("no completed trials".into()))
}

/// Exhaustive search over every combination of discrete axis values.
pub fn grid_search(space: &SearchSpace, evaluator: &dyn Evaluator) -> Result<SearchOutcome> {
    space.validate()?;
    if !space.all_discrete() {
        return Err(Error::Argument(
            "grid search requires every axis to be discrete".into(),
        ));
    }
    let axes: Vec<(&str, &[Value])> = space
        .dimensions
        .iter()
        .map(|d| match d {
            Dimension::Discrete { name, values } => (name.as_str(), values.as_slice()),
            Dimension::Continuous { .. } => unreachable!("validated discrete"),
        })
        .collect();

    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    let budget = evaluator.default_budget();
    let mut trials = Vec::with_capacity(total);
    let mut counters = vec![0usize; axes.len()];
    for id in 0..total {
        let assignment: Assignment = axes
            .iter()
            .zip(&counters)
            .map(|((name, values), &i)| (name.to_string(), values[i].clone()))
            .collect();
        trials.push(run_trial(id, assignment, budget, evaluator));
        // Odometer increment, last axis fastest.
        for axis in (0..axes.len()).rev() {
            counters[axis] += 1;
            if counters[axis] < axes[axis].1.len() {
                break;
            }
            counters[axis] = 0;
        }
    }
    Ok(SearchOutcome {
        best: best_of(&trials)?,
        trials,
    })
}

fn run_trial(
    id: usize,
    assignment: Assignment,
    budget: usize,
    evaluator: &dyn Evaluator,
) -> Trial {
    match evaluator.evaluate(&assignment, budget) {
        Ok(score) if score.is_finite() => Trial {
            id,
            assignment,
            budget_used: budget,
            score,
            status: TrialStatus::Completed,
        },
        _ => Trial {
            id,
            assignment,
            budget_used: budget,
            score: f64::NEG_INFINITY,
            status: TrialStatus::Failed,
        },
    }
}

/// Coordinate-wise hill climbing over discrete axes.
///
/// Each cycle sweeps the axes in declared order, fixing every axis at its
/// best value before moving to the next; a cycle that changes nothing
/// stops the search early.
pub fn greedy_search(
    space: &SearchSpace,
    evaluator: &dyn Evaluator,
    cycles: usize,
) -> Result<SearchOutcome> {
    space.validate()?;
    if !space.all_discrete() {
        return Err(Error::Argument(
            "greedy search requires every axis to be discrete".into(),
        ));
    }
    if cycles == 0 {
        return Err(Error::Argument("greedy search needs cycles >= 1".into()));
    }
    let axes: Vec<(&str, &[Value])> = space
        .dimensions
        .iter()
        .map(|d| match d {
            Dimension::Discrete { name, values } => (name.as_str(), values.as_slice()),
            Dimension::Continuous { .. } => unreachable!("validated discrete"),
        })
        .collect();

    let budget = evaluator.default_budget();
    // Start from the first value of every axis.
    let mut current: Vec<usize> = vec![0; axes.len()];
    let mut trials: Vec<Trial> = Vec::new();
    let mut id = 0usize;

    for _cycle in 0..cycles {
        let before = current.clone();
        for axis in 0..axes.len() {
            let mut best_value = current[axis];
            let mut best_score = f64::NEG_INFINITY;
            for candidate in 0..axes[axis].1.len() {
                let mut probe = current.clone();
                probe[axis] = candidate;
                let assignment: Assignment = axes
                    .iter()
                    .zip(&probe)
                    .map(|((name, values), &i)| (name.to_string(), values[i].clone()))
                    .collect();
                let trial = run_trial(id, assignment, budget, evaluator);
                id += 1;
                if trial.status == TrialStatus::Completed && trial.score > best_score {
                    best_score = trial.score;
                    best_value = candidate;
                }
                trials.push(trial);
            }
            current[axis] = best_value;
        }
        if current == before {
            break;
        }
    }
    Ok(SearchOutcome {
        best: best_of(&trials)?,
        trials,
    })
}

fn sample_dimension(dim: &Dimension, rng: &mut ChaCha8Rng) -> Value {
    match dim {
        Dimension::Discrete { values, .. } => {
            let i = rng.gen_range(0..values.len());
            values[i].clone()
        }
        Dimension::Continuous {
            low, high, log_scale, ..
        } => {
            let v = if *log_scale {
                (rng.gen_range(low.ln()..high.ln())).exp()
            } else {
                rng.gen_range(*low..*high)
            };
            Value::from(v)
        }
    }
}

/// Uniform random sampling of the space, `budget` trials.
pub fn random_search(
    space: &SearchSpace,
    evaluator: &dyn Evaluator,
    budget: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    space.validate()?;
    if budget == 0 {
        return Err(Error::Argument("random search needs budget >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epochs = evaluator.default_budget();
    let mut trials = Vec::with_capacity(budget);
    for id in 0..budget {
        let assignment: Assignment = space
            .dimensions
            .iter()
            .map(|d| (d.name().to_string(), sample_dimension(d, &mut rng)))
            .collect();
        trials.push(run_trial(id, assignment, epochs, evaluator));
    }
    Ok(SearchOutcome {
        best: best_of(&trials)?,
        trials,
    })
}

/// One rung of successive halving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub rung: usize,
    pub budget: usize,
    /// Trial ids evaluated at this rung.
    pub survivors: Vec<usize>,
}

/// Successive-halving outcome: ledger plus per-rung survivor lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalvingOutcome {
    pub best: Trial,
    pub trials: Vec<Trial>,
    pub rungs: Vec<Rung>,
}

/// Successive halving: random configurations, periodic pruning.
///
/// Rung 0 evaluates `n_initial` random configurations at `min_budget`
/// epochs; each subsequent rung keeps the top `ceil(n/eta)` by score and
/// multiplies the per-configuration budget by `eta`, until one remains.
pub fn successive_halving(
    space: &SearchSpace,
    evaluator: &dyn Evaluator,
    n_initial: usize,
    eta: usize,
    min_budget: usize,
    seed: u64,
) -> Result<HalvingOutcome> {
    space.validate()?;
    if eta < 2 {
        return Err(Error::Argument("eta must be >= 2".into()));
    }
    if n_initial < eta {
        return Err(Error::Argument("n_initial must be >= eta".into()));
    }
    if min_budget == 0 {
        return Err(Error::Argument("min_budget must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignments: Vec<Assignment> = (0..n_initial)
        .map(|_| {
            space
                .dimensions
                .iter()
                .map(|d| (d.name().to_string(), sample_dimension(d, &mut rng)))
                .collect()
        })
        .collect();

    let mut trials: Vec<Trial> = assignments
        .iter()
        .cloned()
        .enumerate()
        .map(|(id, assignment)| Trial {
            id,
            assignment,
            budget_used: 0,
            score: f64::NEG_INFINITY,
            status: TrialStatus::Pruned,
        })
        .collect();

    let mut alive: Vec<usize> = (0..n_initial).collect();
    let mut budget = min_budget;
    let mut rungs = Vec::new();
    let mut rung_index = 0usize;

    loop {
        for &id in &alive {
            let trial = run_trial(id, assignments[id].clone(), budget, evaluator);
            trials[id] = Trial { id, ..trial };
        }
        rungs.push(Rung {
            rung: rung_index,
            budget,
            survivors: alive.clone(),
        });
        if alive.len() == 1 {
            break;
        }
        let keep = alive.len().div_ceil(eta);
        let mut ranked = alive.clone();
        ranked.sort_by(|&a, &b| {
            trials[b]
                .score
                .partial_cmp(&trials[a].score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let survivors: Vec<usize> = ranked.into_iter().take(keep).collect();
        for &id in &alive {
            if !survivors.contains(&id) {
                trials[id].status = TrialStatus::Pruned;
            }
        }
        alive = survivors;
        alive.sort_unstable();
        budget *= eta;
        rung_index += 1;
    }

    let best = best_of(&trials)?;
    Ok(HalvingOutcome {
        best,
        trials,
        rungs,
    })
}

/// Write a trial ledger as CSV: id, assignment JSON, budget, score, status.
pub fn write_trials_csv<W: Write>(trials: &[Trial], mut writer: W) -> Result<()> {
    let mut csv_writer = csv::Writer::from_writer(&mut writer);
    csv_writer.write_record(["id", "assignment", "budget", "score", "status"])?;
    for trial in trials {
        let status = match trial.status {
            TrialStatus::Completed => "completed",
            TrialStatus::Pruned => "pruned",
            TrialStatus::Failed => "failed",
        };
        csv_writer.write_record([
            trial.id.to_string(),
            serde_json::to_string(&trial.assignment)?,
            trial.budget_used.to_string(),
            format!("{}", trial.score),
            status.to_string(),
        ])?;
    }
    csv_writer.flush()?;
    Ok(())
}
