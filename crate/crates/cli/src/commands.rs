//! Pipeline assembly and the four commands.
//!
//! Every command is a pure function of the config file and the data files
//! it references; reruns write byte-identical outputs. Nothing is written
//! outside the configured output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use riskcast::backtest::{run_multi_portfolio, write_plot_csv, write_trades_csv, BacktestReport};
use riskcast::labeling::{
    detect_drawdowns, label_classification, label_regression, qualifying_episodes,
    shift_for_actionability, LabelTask,
};
use riskcast::matrix::Matrix;
use riskcast::models::{
    indicator_from_model, smooth_indicator, train, Dataset, Task, TrainedModel,
};
use riskcast::preprocess::{apply_scaler, fit_pca, fit_scaler, pca_transform, window};
use riskcast::timeseries::{align, ingest_csv, pct_change, TimeSeriesFrame};
use riskcast::tuning::{
    grid_search, greedy_search, random_search, successive_halving, walk_forward_splits,
    write_trials_csv, SearchSpace, SplitEvaluator, SplitPreprocess, Trial,
};
use riskcast::{Error, Result, RiskIndicatorSeries};

use crate::config::{PipelineConfig, SearchStrategy};

/// Everything the commands derive from the raw data files.
pub struct PipelineData {
    pub frame: TimeSeriesFrame,
    /// Dates carrying feature rows: the aligned calendar minus the first
    /// `pct_change_horizon` days.
    pub feature_dates: Vec<NaiveDate>,
    pub features: Matrix,
    /// Supervised targets aligned with `feature_dates`.
    pub targets: Vec<f64>,
}

pub fn load_frame(config: &PipelineConfig) -> Result<TimeSeriesFrame> {
    let mut frames = Vec::with_capacity(config.data.len());
    for source in &config.data {
        let bytes = fs::read(&source.path).map_err(|e| {
            Error::Data(format!(
                "cannot read data file `{}`: {e}",
                source.path.display()
            ))
        })?;
        frames.push(ingest_csv(bytes.as_slice(), &source.name, source.category)?);
    }
    align(&frames, &config.alignment)
}

pub fn assemble(config: &PipelineConfig) -> Result<PipelineData> {
    let frame = load_frame(config)?;
    let horizon = config.preprocess.pct_change_horizon;
    if frame.len() <= horizon + config.target.lead {
        return Err(Error::Data(format!(
            "only {} aligned rows; need more than pct_change_horizon + lead = {}",
            frame.len(),
            horizon + config.target.lead
        )));
    }

    let names: Vec<String> = frame.series_names().iter().map(|s| s.to_string()).collect();
    let mut features = Matrix::zeros(frame.len() - horizon, names.len());
    for (c, name) in names.iter().enumerate() {
        let changes = pct_change(frame.values(name).unwrap(), horizon)?;
        features.set_col(c, &changes);
    }
    let feature_dates = frame.dates()[horizon..].to_vec();

    let prices = frame.values(&config.target.price_series).unwrap();
    let spec = config.target.to_spec();
    let full_targets: Vec<f64> = match spec.task {
        LabelTask::Classification => label_classification(prices, &spec)?
            .into_iter()
            .map(f64::from)
            .collect(),
        LabelTask::Regression => label_regression(prices, &spec)?,
    };
    let targets = full_targets[horizon..].to_vec();

    Ok(PipelineData {
        frame,
        feature_dates,
        features,
        targets,
    })
}

fn ensure_output_dir(config: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&config.output_dir)?;
    Ok(())
}

fn out_path(config: &PipelineConfig, name: &str) -> PathBuf {
    config.output_dir.join(name)
}

fn task_of(config: &PipelineConfig) -> Task {
    match config.target.task {
        LabelTask::Classification => Task::Classification,
        LabelTask::Regression => Task::Regression,
    }
}

/// Write drawdown labels and the episode list.
pub fn cmd_label(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let data = assemble(config)?;
    ensure_output_dir(config)?;

    let prices = data.frame.values(&config.target.price_series).unwrap();
    let spec = config.target.to_spec();
    let episodes = detect_drawdowns(prices)?;
    let qualifying = qualifying_episodes(&episodes, spec.mode)?;

    let episodes_path = out_path(config, "episodes.csv");
    {
        let mut writer = csv::Writer::from_path(&episodes_path)?;
        writer.write_record(["peak_date", "trough_date", "depth", "qualifies"])?;
        for e in &episodes {
            let qualifies = qualifying.iter().any(|q| q.peak_index == e.peak_index);
            writer.write_record([
                data.frame.dates()[e.peak_index].to_string(),
                data.frame.dates()[e.trough_index].to_string(),
                format!("{}", e.depth),
                qualifies.to_string(),
            ])?;
        }
        writer.flush()?;
    }

    let labels_path = out_path(config, "labels.csv");
    {
        let full_labels: Vec<f64> = match spec.task {
            LabelTask::Classification => label_classification(prices, &spec)?
                .into_iter()
                .map(f64::from)
                .collect(),
            LabelTask::Regression => label_regression(prices, &spec)?,
        };
        let mut writer = csv::Writer::from_path(&labels_path)?;
        writer.write_record(["date", "label"])?;
        for (date, label) in data.frame.dates().iter().zip(&full_labels) {
            writer.write_record([date.to_string(), format!("{label}")])?;
        }
        writer.flush()?;
    }

    Ok(vec![labels_path, episodes_path])
}

/// The supervised dataset after the actionability shift, scaling, PCA,
/// and (for sequence models) windowing; plus the fitted transforms and
/// the full-range matrix they were applied to.
struct PreparedTraining {
    dataset: Dataset,
    /// Transformed features over every feature date (for indicators).
    transformed_all: Matrix,
    preprocess_doc: serde_json::Value,
}

fn prepare_training(config: &PipelineConfig, data: &PipelineData) -> Result<PreparedTraining> {
    let (shifted_features, shifted_targets) =
        shift_for_actionability(&data.features, &data.targets, config.target.lead)?;

    // Transforms are fit on the training portion only (the validation
    // tail stays unseen), then applied over the whole feature range.
    let train_section = config.train_section()?;
    let n = shifted_targets.len();
    let val_len = ((n as f64) * train_section.validation_fraction).floor() as usize;
    let fit_rows = shifted_features.slice_rows(0..n - val_len);

    let mut preprocess_doc = serde_json::Map::new();
    let scaled_all = match config.preprocess.scaler {
        Some(kind) => {
            let params = fit_scaler(&fit_rows, kind)?;
            preprocess_doc.insert("scaler".into(), serde_json::to_value(&params)?);
            apply_scaler(&params, &data.features)?
        }
        None => data.features.clone(),
    };
    let transformed_all = match config.preprocess.pca_components {
        Some(k) => {
            let scaled_fit = scaled_all.slice_rows(0..n - val_len);
            let pca = fit_pca(&scaled_fit, k)?;
            preprocess_doc.insert("pca".into(), serde_json::to_value(&pca)?);
            pca_transform(&pca, &scaled_all)?
        }
        None => scaled_all,
    };

    let shifted_transformed = transformed_all.slice_rows(0..n);
    let dataset = match config.preprocess.window {
        None => Dataset::Rows {
            features: shifted_transformed,
            targets: shifted_targets,
        },
        Some(len) => {
            let samples = window(&shifted_transformed, len)?;
            let targets = shifted_targets[len - 1..].to_vec();
            Dataset::Sequences { samples, targets }
        }
    };

    Ok(PreparedTraining {
        dataset,
        transformed_all,
        preprocess_doc: serde_json::Value::Object(preprocess_doc),
    })
}

fn train_final_model(
    config: &PipelineConfig,
    data: &PipelineData,
) -> Result<(TrainedModel, PreparedTraining)> {
    let prepared = prepare_training(config, data)?;
    let model_config = config.model_section()?.to_config(task_of(config), config.seed);
    let train_config = config
        .train_section()?
        .to_config(config.preprocess.input_noise_sigma, config.seed);
    let reg = config.regularization.to_config();
    let trained = train(&model_config, &prepared.dataset, &train_config, &reg)?;
    Ok((trained, prepared))
}

/// Train a model and write its JSON document plus per-epoch history.
pub fn cmd_train(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let data = assemble(config)?;
    let (trained, prepared) = train_final_model(config, &data)?;
    ensure_output_dir(config)?;

    let model_path = out_path(config, "model.json");
    fs::write(&model_path, trained.to_json()?)?;

    let preprocess_path = out_path(config, "preprocess.json");
    fs::write(
        &preprocess_path,
        serde_json::to_string_pretty(&prepared.preprocess_doc)?,
    )?;

    let history_path = out_path(config, "history.csv");
    {
        let mut writer = csv::Writer::from_path(&history_path)?;
        writer.write_record(["epoch", "train_loss", "val_loss", "clamped"])?;
        for (epoch, stats) in trained.history.iter().enumerate() {
            writer.write_record([
                epoch.to_string(),
                format!("{}", stats.train_loss),
                stats
                    .val_loss
                    .map(|v| format!("{v}"))
                    .unwrap_or_default(),
                stats.clamped.to_string(),
            ])?;
        }
        writer.flush()?;
    }

    Ok(vec![model_path, history_path, preprocess_path])
}

/// Run the configured hyperparameter search under walk-forward splits.
pub fn cmd_tune(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let data = assemble(config)?;
    let search = config.search_section()?;
    let (shifted_features, shifted_targets) =
        shift_for_actionability(&data.features, &data.targets, config.target.lead)?;
    let shifted_dates = &data.feature_dates[..shifted_targets.len()];

    let splits = walk_forward_splits(shifted_dates, &config.walk_forward_section()?.to_config())?;
    let evaluator = SplitEvaluator {
        features: shifted_features,
        targets: shifted_targets,
        splits,
        metric: search.metric,
        preprocess: SplitPreprocess {
            scaler: config.preprocess.scaler,
            pca_components: config.preprocess.pca_components,
            window: config.preprocess.window,
        },
        model: config.model_section()?.to_config(task_of(config), config.seed),
        train: config
            .train_section()?
            .to_config(config.preprocess.input_noise_sigma, config.seed),
        regularization: config.regularization.to_config(),
    };

    let space = SearchSpace {
        dimensions: search.dimensions.clone(),
    };
    let (trials, best, rungs): (Vec<Trial>, Trial, Option<serde_json::Value>) =
        match &search.strategy {
            SearchStrategy::Grid => {
                let out = grid_search(&space, &evaluator)?;
                (out.trials, out.best, None)
            }
            SearchStrategy::Greedy { cycles } => {
                let out = greedy_search(&space, &evaluator, *cycles)?;
                (out.trials, out.best, None)
            }
            SearchStrategy::Random { budget } => {
                let out = random_search(&space, &evaluator, *budget, config.seed)?;
                (out.trials, out.best, None)
            }
            SearchStrategy::SuccessiveHalving {
                n_initial,
                eta,
                min_budget,
            } => {
                let out = successive_halving(
                    &space,
                    &evaluator,
                    *n_initial,
                    *eta,
                    *min_budget,
                    config.seed,
                )?;
                let rungs = serde_json::to_value(&out.rungs)?;
                (out.trials, out.best, Some(rungs))
            }
        };

    ensure_output_dir(config)?;
    let csv_path = out_path(config, "trials.csv");
    {
        let file = fs::File::create(&csv_path)?;
        write_trials_csv(&trials, file)?;
    }
    let json_path = out_path(config, "trials.json");
    {
        let mut doc = serde_json::Map::new();
        doc.insert("best".into(), serde_json::to_value(&best)?);
        doc.insert("trials".into(), serde_json::to_value(&trials)?);
        if let Some(rungs) = rungs {
            doc.insert("rungs".into(), rungs);
        }
        fs::write(&json_path, serde_json::to_string_pretty(&doc)?)?;
    }
    Ok(vec![csv_path, json_path])
}

fn indicator_for(
    config: &PipelineConfig,
    data: &PipelineData,
    trained: &TrainedModel,
    transformed_all: &Matrix,
) -> Result<RiskIndicatorSeries> {
    let indicator = indicator_from_model(trained, transformed_all, &data.feature_dates)?;
    match config.strategy_section()?.smoothing_span {
        Some(span) if span > 1 => smooth_indicator(&indicator, span),
        _ => Ok(indicator),
    }
}

/// Train, build the indicator, simulate the strategy, write the report.
pub fn cmd_backtest(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let data = assemble(config)?;
    let strategy = config.strategy_section()?;
    let (strategy_config, benchmark) = strategy.to_config()?;

    let (trained, prepared) = train_final_model(config, &data)?;
    let indicator = indicator_for(config, &data, &trained, &prepared.transformed_all)?;

    // Daily returns for every referenced asset, on the indicator calendar.
    let mut assets: std::collections::BTreeSet<&String> = strategy_config
        .regimes
        .iter()
        .flat_map(|(_, p)| p.weights.keys())
        .collect();
    assets.extend(benchmark.weights.keys());
    let horizon = config.preprocess.pct_change_horizon;
    let mut asset_returns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for asset in assets {
        let values = data.frame.values(asset).ok_or_else(|| {
            Error::Data(format!("strategy references unknown asset `{asset}`"))
        })?;
        let returns: Vec<f64> = (horizon..values.len())
            .map(|i| values[i] / values[i - 1] - 1.0)
            .collect();
        asset_returns.insert(asset.clone(), returns);
    }

    let report = run_multi_portfolio(&indicator, &asset_returns, &strategy_config, &benchmark)?;

    ensure_output_dir(config)?;
    let report_path = out_path(config, "report.json");
    fs::write(&report_path, report_json(&report)?)?;

    let plot_path = out_path(config, "plot.csv");
    {
        let file = fs::File::create(&plot_path)?;
        write_plot_csv(&report, &indicator, file)?;
    }
    let trades_path = out_path(config, "trades.csv");
    {
        let file = fs::File::create(&trades_path)?;
        write_trades_csv(&report, file)?;
    }
    Ok(vec![report_path, plot_path, trades_path])
}

fn report_json(report: &BacktestReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// Single status line for stdout.
pub fn status_line(command: &str, outputs: &[PathBuf]) -> String {
    let outputs: Vec<String> = outputs
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    serde_json::json!({
        "status": "ok",
        "command": command,
        "outputs": outputs,
    })
    .to_string()
}

/// Load and validate the config document from a path.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Data(format!("cannot read config file `{}`: {e}", path.display()))
    })?;
    PipelineConfig::from_json(&text)
}
