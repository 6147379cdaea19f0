//! Helpers shared by the CLI and acceptance test suites.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_riskcast")
}

pub fn run(subcommand: &str, config: &Path) -> Output {
    Command::new(binary())
        .arg(subcommand)
        .arg("--config")
        .arg(config)
        .output()
        .expect("binary runs")
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

/// A small deterministic two-asset dataset: a trending, wiggling equity
/// series and a smooth bond series, written as CSV files.
pub fn write_demo_data(dir: &Path) -> (PathBuf, PathBuf) {
    use chrono::Datelike;
    let mut equity = String::from("date,close\n");
    let mut bond = String::from("date,close\n");
    let start = chrono::NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    let mut equity_level = 100.0f64;
    let mut bond_level = 100.0f64;
    let mut day = 0u64;
    let mut written = 0;
    while written < 900 {
        let date = start + chrono::Days::new(day);
        day += 1;
        if matches!(
            date.weekday(),
            chrono::Weekday::Sat | chrono::Weekday::Sun
        ) {
            continue;
        }
        // Deterministic pseudo-random walk with drift and regime dips.
        let t = written as f64;
        let wiggle = (t * 0.7).sin() * 0.004 + (t * 0.11).sin() * 0.006;
        let dip = if (200.0..260.0).contains(&t) || (600.0..650.0).contains(&t) {
            -0.004
        } else {
            0.0008
        };
        equity_level *= 1.0 + wiggle + dip;
        bond_level *= 1.0 + 0.0001 + (t * 0.3).sin() * 0.0003;
        equity.push_str(&format!("{date},{equity_level:.4}\n"));
        bond.push_str(&format!("{date},{bond_level:.4}\n"));
        written += 1;
    }
    let equity_path = dir.join("equity.csv");
    let bond_path = dir.join("bond.csv");
    std::fs::write(&equity_path, equity).unwrap();
    std::fs::write(&bond_path, bond).unwrap();
    (equity_path, bond_path)
}

/// A full pipeline config over the demo data.
pub fn demo_config(dir: &Path, equity: &Path, bond: &Path, seed: u64) -> String {
    format!(
        r#"{{
  "seed": {seed},
  "output_dir": "{out}",
  "data": [
    {{"path": "{equity}", "name": "equity", "category": "equity_index"}},
    {{"path": "{bond}", "name": "bond", "category": "bond"}}
  ],
  "alignment": {{"join": "intersection", "fill": "forward_fill", "max_fill_gap": 5}},
  "target": {{
    "price_series": "equity",
    "task": "classification",
    "mode": {{"threshold": 0.05}},
    "lead": 2
  }},
  "preprocess": {{"pct_change_horizon": 1, "scaler": "zscore"}},
  "model": {{"architecture": "logistic"}},
  "train": {{
    "learning_rate": 0.1,
    "batch_size": 16,
    "max_epochs": 25,
    "validation_fraction": 0.2,
    "loss": "cross_entropy"
  }},
  "regularization": {{"lambda": 0.0001, "mix": 0.5, "early_stopping_patience": 10}},
  "walk_forward": {{
    "split_unit": {{"fixed_days": 120}},
    "initial_train_units": 3,
    "test_units": 1
  }},
  "search": {{
    "strategy": {{"random": {{"budget": 3}}}},
    "metric": "accuracy",
    "dimensions": [
      {{"continuous": {{"name": "learning_rate", "low": 0.01, "high": 0.5, "log_scale": true}}}}
    ]
  }},
  "strategy": {{
    "regimes": [
      {{"lower": -1.0, "name": "defensive", "weights": {{"bond": 1.0}}}},
      {{"lower": 0.0, "name": "positive", "weights": {{"equity": 1.0}}}}
    ],
    "hysteresis_margin": 0.2,
    "execution_lag_days": 1,
    "transaction_cost_bp": 0.0,
    "benchmark": {{"lower": -1.0, "name": "benchmark", "weights": {{"equity": 1.0}}}},
    "smoothing_span": 5
  }}
}}"#,
        out = dir.join("out").display(),
        equity = equity.display(),
        bond = bond.display(),
    )
}
