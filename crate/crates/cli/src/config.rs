//! Run configuration: one JSON document per run.
//!
//! Every knob lives here so a run is a pure function of the config file
//! and the data files it references. Unknown keys are rejected with the
//! offending name, and all randomness derives from the single `seed`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use riskcast::backtest::{Portfolio, StrategyConfig};
use riskcast::labeling::{EpisodeSelector, LabelTask, RegressionKind, TargetSpec};
use riskcast::models::{
    Architecture, LossKind, ModelConfig, RegularizationConfig, TrainConfig,
};
use riskcast::preprocess::{NoiseConfig, ScalerKind};
use riskcast::timeseries::{AlignmentPolicy, Category};
use riskcast::tuning::{Dimension, Metric, SplitUnit, WalkForwardConfig};
use riskcast::{Error, Result};

/// One input CSV: path, series name, and its category tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    pub name: String,
    pub category: Category,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    /// Series whose prices define drawdowns and targets.
    pub price_series: String,
    pub task: LabelTask,
    pub mode: EpisodeSelector,
    #[serde(default = "default_regression_kind")]
    pub regression_kind: RegressionKind,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default = "default_lead")]
    pub lead: usize,
}

fn default_regression_kind() -> RegressionKind {
    RegressionKind::DrawdownMagnitude
}

fn default_lead() -> usize {
    2
}

impl TargetSection {
    pub fn to_spec(&self) -> TargetSpec {
        TargetSpec {
            task: self.task,
            mode: self.mode,
            regression_kind: self.regression_kind,
            horizon: self.horizon,
            lead: self.lead,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    /// Horizon for converting price levels into percentage changes.
    #[serde(default = "default_pct_horizon")]
    pub pct_change_horizon: usize,
    #[serde(default)]
    pub scaler: Option<ScalerKind>,
    #[serde(default)]
    pub pca_components: Option<usize>,
    /// Gaussian noise added to training inputs.
    #[serde(default)]
    pub input_noise_sigma: f64,
    /// Window length; required by the GRU architecture.
    #[serde(default)]
    pub window: Option<usize>,
}

fn default_pct_horizon() -> usize {
    1
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            pct_change_horizon: 1,
            scaler: Some(ScalerKind::Zscore),
            pca_components: None,
            input_noise_sigma: 0.0,
            window: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: Architecture,
    #[serde(default)]
    pub dropout_p: f64,
    #[serde(default)]
    pub batch_norm: bool,
}

impl ModelSection {
    pub fn to_config(&self, task: riskcast::models::Task, seed: u64) -> ModelConfig {
        ModelConfig {
            architecture: self.architecture.clone(),
            task,
            dropout_p: self.dropout_p,
            batch_norm: self.batch_norm,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    pub loss: LossKind,
}

fn default_validation_fraction() -> f64 {
    0.2
}

impl TrainSection {
    pub fn to_config(&self, noise_sigma: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            validation_fraction: self.validation_fraction,
            input_noise: (noise_sigma > 0.0).then_some(NoiseConfig {
                sigma: noise_sigma,
                seed,
            }),
            loss: self.loss,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationSection {
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub mix: f64,
    #[serde(default = "default_patience")]
    pub early_stopping_patience: usize,
}

fn default_patience() -> usize {
    10
}

impl Default for RegularizationSection {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            mix: 0.0,
            early_stopping_patience: default_patience(),
        }
    }
}

impl RegularizationSection {
    pub fn to_config(&self) -> RegularizationConfig {
        RegularizationConfig {
            lambda: self.lambda,
            mix: self.mix,
            early_stopping_patience: self.early_stopping_patience,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkForwardSection {
    pub split_unit: SplitUnit,
    pub initial_train_units: usize,
    pub test_units: usize,
    #[serde(default)]
    pub max_splits: Option<usize>,
    #[serde(default = "default_expanding")]
    pub expanding: bool,
}

fn default_expanding() -> bool {
    true
}

impl WalkForwardSection {
    pub fn to_config(&self) -> WalkForwardConfig {
        WalkForwardConfig {
            split_unit: self.split_unit,
            initial_train_units: self.initial_train_units,
            test_units: self.test_units,
            max_splits: self.max_splits,
            expanding: self.expanding,
        }
    }
}

/// Which search runs and its budget knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    Grid,
    Greedy { cycles: usize },
    Random { budget: usize },
    SuccessiveHalving { n_initial: usize, eta: usize, min_budget: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub strategy: SearchStrategy,
    pub metric: Metric,
    pub dimensions: Vec<Dimension>,
}

/// One rung of the regime ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSection {
    pub lower: f64,
    pub name: String,
    /// Asset name -> weight; assets refer to data series.
    pub weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub regimes: Vec<RegimeSection>,
    #[serde(default)]
    pub hysteresis_margin: f64,
    #[serde(default = "default_lag")]
    pub execution_lag_days: usize,
    #[serde(default)]
    pub transaction_cost_bp: f64,
    pub benchmark: RegimeSection,
    /// EMA span applied to the indicator before trading; 1 or absent
    /// trades on the raw indicator.
    #[serde(default)]
    pub smoothing_span: Option<usize>,
}

fn default_lag() -> usize {
    1
}

impl StrategySection {
    pub fn to_config(&self) -> Result<(StrategyConfig, Portfolio)> {
        let mut regimes = Vec::with_capacity(self.regimes.len());
        for r in &self.regimes {
            regimes.push((
                r.lower,
                Portfolio {
                    name: r.name.clone(),
                    weights: r.weights.clone(),
                },
            ));
        }
        let config = StrategyConfig {
            regimes,
            hysteresis_margin: self.hysteresis_margin,
            execution_lag_days: self.execution_lag_days,
            transaction_cost_bp: self.transaction_cost_bp,
        };
        config.validate()?;
        let benchmark = Portfolio {
            name: self.benchmark.name.clone(),
            weights: self.benchmark.weights.clone(),
        };
        benchmark.validate()?;
        Ok((config, benchmark))
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: Vec<DataSource>,
    #[serde(default)]
    pub alignment: AlignmentPolicy,
    pub target: TargetSection,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    pub model: Option<ModelSection>,
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub regularization: RegularizationSection,
    pub walk_forward: Option<WalkForwardSection>,
    pub search: Option<SearchSection>,
    pub strategy: Option<StrategySection>,
}

impl PipelineConfig {
    /// Parse and structurally validate a config document.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.data.is_empty() {
            return Err(Error::Config("config lists no data sources".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for source in &self.data {
            if !names.insert(&source.name) {
                return Err(Error::Config(format!(
                    "duplicate data series name `{}`",
                    source.name
                )));
            }
        }
        if !names.contains(&self.target.price_series) {
            return Err(Error::Config(format!(
                "target price_series `{}` is not among the data sources",
                self.target.price_series
            )));
        }
        self.target.to_spec().validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("target: {m}")),
            other => other,
        })?;
        if self.preprocess.pct_change_horizon == 0 {
            return Err(Error::Config("pct_change_horizon must be >= 1".into()));
        }
        if self.preprocess.input_noise_sigma < 0.0 {
            return Err(Error::Config("input_noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn model_section(&self) -> Result<&ModelSection> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a `model` section".into()))
    }

    pub fn train_section(&self) -> Result<&TrainSection> {
        self.train
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a `train` section".into()))
    }

    pub fn walk_forward_section(&self) -> Result<&WalkForwardSection> {
        self.walk_forward
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a `walk_forward` section".into()))
    }

    pub fn search_section(&self) -> Result<&SearchSection> {
        self.search
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a `search` section".into()))
    }

    pub fn strategy_section(&self) -> Result<&StrategySection> {
        self.strategy
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a `strategy` section".into()))
    }
}
