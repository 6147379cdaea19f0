//! Drawdown-aware market trend prediction toolkit.
//!
//! `riskcast` turns daily financial time series into supervised
//! drawdown-prediction problems, trains small neural and linear models under
//! walk-forward validation, maps predictions into a bounded risk indicator,
//! and backtests threshold/hysteresis portfolio-switching strategies.
//!
//! The pipeline stages map onto the top-level modules:
//!
//! - [`timeseries`]: CSV ingestion, calendar alignment, percentage changes.
//! - [`labeling`]: drawdown episode detection and target construction.
//! - [`preprocess`]: scalers, PCA, input noise, sequence windowing.
//! - [`models`]: linear/logistic/MLP/GRU models trained by SGD with
//!   elastic-net regularization, dropout, batch normalization, and early
//!   stopping; risk-indicator output mapping.
//! - [`tuning`]: hyperparameter search (grid, greedy, random, successive
//!   halving) evaluated through walk-forward splits.
//! - [`backtest`]: hysteresis regime switching, strategy simulation, and
//!   the performance metric suite.
//! - [`explain`]: permutation feature importance and partial dependence.
//!
//! A narrative guide with runnable snippets lives in the `book/` directory
//! of the repository.

pub mod backtest;
pub mod error;
pub mod explain;
pub mod indicator;
pub mod labeling;
pub mod matrix;
pub mod models;
pub mod preprocess;
pub mod timeseries;
pub mod tuning;

pub use error::{Error, Result};
pub use indicator::RiskIndicatorSeries;
pub use matrix::Matrix;
