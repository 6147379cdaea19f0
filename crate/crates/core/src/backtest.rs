//! Regime switching and portfolio backtesting.
//!
//! An indicator value observed at the close of day `t` decides the regime;
//! the position takes effect `execution_lag_days` later and earns that
//! day's returns. The first day of the window is pure inception: equity
//! starts at 1.0 there and the first day's return is never earned.
//! Hysteresis separates the switch-down and switch-up levels around each
//! regime boundary so small indicator wiggles do not churn the portfolio.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicator::RiskIndicatorSeries;

/// Fixed portfolio: nonnegative weights summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub name: String,
    pub weights: BTreeMap<String, f64>,
}

impl Portfolio {
    pub fn new(name: &str, weights: &[(&str, f64)]) -> Result<Self> {
        let portfolio = Self {
            name: name.to_string(),
            weights: weights
                .iter()
                .map(|(asset, w)| (asset.to_string(), *w))
                .collect(),
        };
        portfolio.validate()?;
        Ok(portfolio)
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.weights.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "portfolio `{}` weights sum to {total}, expected 1",
                self.name
            )));
        }
        if self.weights.values().any(|&w| w < 0.0) {
            return Err(Error::Config(format!(
                "portfolio `{}` has a negative weight",
                self.name
            )));
        }
        Ok(())
    }

    /// Half the L1 distance between weight vectors: the traded fraction.
    pub fn turnover(&self, other: &Portfolio) -> f64 {
        let mut assets: Vec<&String> = self.weights.keys().collect();
        for asset in other.weights.keys() {
            if !self.weights.contains_key(asset) {
                assets.push(asset);
            }
        }
        let l1: f64 = assets
            .iter()
            .map(|asset| {
                let a = self.weights.get(*asset).copied().unwrap_or(0.0);
                let b = other.weights.get(*asset).copied().unwrap_or(0.0);
                (a - b).abs()
            })
            .sum();
        l1 / 2.0
    }
}

/// Regime ladder with hysteresis and execution settings.
///
/// `regimes` maps each lower indicator threshold to a portfolio; the first
/// threshold must be -1 so the thresholds partition `[-1, 1]`. To move up
/// past a boundary the indicator must exceed it by `hysteresis_margin`;
/// moving down happens as soon as the indicator falls below the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub regimes: Vec<(f64, Portfolio)>,
    pub hysteresis_margin: f64,
    pub execution_lag_days: usize,
    pub transaction_cost_bp: f64,
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::Config("strategy needs at least one regime".into()));
        }
        for pair in self.regimes.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::Config(
                    "regime thresholds must be strictly increasing".into(),
                ));
            }
        }
        if (self.regimes[0].0 - (-1.0)).abs() > 1e-12 {
            return Err(Error::Config(
                "the first regime threshold must be -1 so the ladder covers [-1, 1]".into(),
            ));
        }
        if self.hysteresis_margin < 0.0 {
            return Err(Error::Config("hysteresis margin must be >= 0".into()));
        }
        if self.execution_lag_days < 1 {
            return Err(Error::Config("execution_lag_days must be >= 1".into()));
        }
        if self.transaction_cost_bp < 0.0 {
            return Err(Error::Config("transaction costs must be >= 0".into()));
        }
        for (_, portfolio) in &self.regimes {
            portfolio.validate()?;
        }
        Ok(())
    }

    /// Highest regime whose lower threshold is at or below `value`.
    fn band_of(&self, value: f64) -> usize {
        let mut band = 0;
        for (i, (threshold, _)) in self.regimes.iter().enumerate() {
            if value >= *threshold {
                band = i;
            }
        }
        band
    }

    /// One hysteresis step from regime `current`.
    fn step(&self, current: usize, value: f64) -> usize {
        let lower = self.regimes[current].0;
        if value < lower {
            // Fall straight to the band containing the value.
            return self.band_of(value);
        }
        // Climb only past boundaries cleared by the margin.
        let mut target = current;
        for j in (current + 1)..self.regimes.len() {
            if value > self.regimes[j].0 + self.hysteresis_margin {
                target = j;
            }
        }
        target
    }
}

/// Two-state regime for the plain hysteresis band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Defensive,
    Positive,
}

/// Dual-threshold regime filter.
///
/// Switch to defensive when the value drops below `lower`; return to
/// positive only once the value exceeds `upper`; hold otherwise. With
/// `lower == upper` this is a plain threshold rule that holds at ties.
pub fn apply_hysteresis(
    series: &RiskIndicatorSeries,
    lower: f64,
    upper: f64,
    initial_regime: Regime,
) -> Result<Vec<Regime>> {
    if lower > upper {
        return Err(Error::Argument(format!(
            "hysteresis band needs lower <= upper, got {lower} > {upper}"
        )));
    }
    let mut regime = initial_regime;
    Ok(series
        .values()
        .iter()
        .map(|&v| {
            if v < lower {
                regime = Regime::Defensive;
            } else if v > upper {
                regime = Regime::Positive;
            }
            regime
        })
        .collect())
}

/// A dated regime switch and the portfolio fraction it traded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub date: NaiveDate,
    pub from: String,
    pub to: String,
    pub turnover: f64,
}

/// The seven performance metrics, for one equity curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cumulative_return: f64,
    pub annualized_return: f64,
    pub daily_stddev: f64,
    pub annualized_volatility: f64,
    pub max_drawdown: f64,
    /// Absent when the curve has zero variance.
    pub sharpe: Option<f64>,
    /// Absent when there are no below-zero returns.
    pub sortino: Option<f64>,
}

/// Full backtest output: curves, trades, and metrics for both columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub dates: Vec<NaiveDate>,
    pub equity_curve: Vec<f64>,
    pub benchmark_curve: Vec<f64>,
    pub trade_log: Vec<Trade>,
    /// Regime index held on each date.
    pub regimes: Vec<usize>,
    pub portfolio_metrics: MetricsReport,
    pub benchmark_metrics: MetricsReport,
}

fn portfolio_return(
    portfolio: &Portfolio,
    asset_returns: &BTreeMap<String, Vec<f64>>,
    day: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (asset, weight) in &portfolio.weights {
        let series = asset_returns
            .get(asset)
            .ok_or_else(|| Error::Data(format!("missing return series for asset `{asset}`")))?;
        total += weight * series[day];
    }
    Ok(total)
}

/// Simulate the regime ladder over the indicator.
///
/// The indicator and every return series must share the calendar. The
/// regime decided at the close of day `t` earns returns from day
/// `t + execution_lag_days`; turnover costs hit the execution day
/// multiplicatively. A two-regime config is the classic risk-on /
/// risk-off switch; more regimes give the multi-portfolio ladder.
pub fn run_multi_portfolio(
    indicator: &RiskIndicatorSeries,
    asset_returns: &BTreeMap<String, Vec<f64>>,
    config: &StrategyConfig,
    benchmark: &Portfolio,
) -> Result<BacktestReport> {
    config.validate()?;
    benchmark.validate()?;
    let days = indicator.len();
    if days < 2 {
        return Err(Error::Argument(
            "backtest needs at least 2 calendar days".into(),
        ));
    }
    for (asset, series) in asset_returns {
        if series.len() != days {
            return Err(Error::Data(format!(
                "asset `{asset}` has {} returns for {} indicator days",
                series.len(),
                days
            )));
        }
    }

    // Hysteresis path of decided regimes, one per close.
    let values = indicator.values();
    let mut decided = Vec::with_capacity(days);
    let mut current = config.band_of(values[0]);
    for &v in values {
        current = config.step(current, v);
        decided.push(current);
    }

    // Position earning day d's return: decided at d - lag (held from
    // inception before that).
    let lag = config.execution_lag_days;
    let position: Vec<usize> = (0..days)
        .map(|d| {
            if d >= lag {
                decided[d - lag]
            } else {
                decided[0]
            }
        })
        .collect();

    let mut equity = vec![1.0; days];
    let mut benchmark_curve = vec![1.0; days];
    let mut trades = Vec::new();
    let cost_rate = config.transaction_cost_bp / 10_000.0;

    for d in 1..days {
        let regime = position[d];
        let r = portfolio_return(&config.regimes[regime].1, asset_returns, d)?;
        let mut factor = 1.0 + r;
        if position[d] != position[d - 1] {
            let from = &config.regimes[position[d - 1]].1;
            let to = &config.regimes[regime].1;
            let turnover = from.turnover(to);
            factor *= 1.0 - cost_rate * turnover;
            trades.push(Trade {
                date: indicator.dates()[d],
                from: from.name.clone(),
                to: to.name.clone(),
                turnover,
            });
        }
        equity[d] = equity[d - 1] * factor;

        let br = portfolio_return(benchmark, asset_returns, d)?;
        benchmark_curve[d] = benchmark_curve[d - 1] * (1.0 + br);
    }

    let portfolio_metrics = compute_metrics(&equity, 252.0, 0.0)?;
    let benchmark_metrics = compute_metrics(&benchmark_curve, 252.0, 0.0)?;
    Ok(BacktestReport {
        dates: indicator.dates().to_vec(),
        equity_curve: equity,
        benchmark_curve,
        trade_log: trades,
        regimes: position,
        portfolio_metrics,
        benchmark_metrics,
    })
}

/// Two-asset switch strategy: sugar over [`run_multi_portfolio`].
pub fn run_switch_strategy(
    indicator: &RiskIndicatorSeries,
    asset_returns: &BTreeMap<String, Vec<f64>>,
    config: &StrategyConfig,
    benchmark: &Portfolio,
) -> Result<BacktestReport> {
    if config.regimes.len() != 2 {
        return Err(Error::Config(
            "the switch strategy takes exactly two regimes".into(),
        ));
    }
    run_multi_portfolio(indicator, asset_returns, config, benchmark)
}

/// Performance metrics of one equity curve.
///
/// Daily returns come from consecutive curve values; the standard
/// deviation is the population estimator; Sortino uses downside deviation
/// below zero. `trading_days_per_year` is the annualization factor (252 by
/// default) and `risk_free` is an annual rate, divided evenly across
/// trading days.
pub fn compute_metrics(
    equity_curve: &[f64],
    trading_days_per_year: f64,
    risk_free: f64,
) -> Result<MetricsReport> {
    if equity_curve.len() < 2 {
        return Err(Error::Argument(
            "metrics need an equity curve of at least 2 points".into(),
        ));
    }
    if equity_curve.iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("equity curve values must be positive".into()));
    }

    let returns: Vec<f64> = equity_curve
        .windows(2)
        .map(|w| w[1] / w[0] - 1.0)
        .collect();
    let days = returns.len() as f64;
    let start = equity_curve[0];
    let end = equity_curve[equity_curve.len() - 1];

    let cumulative_return = end / start - 1.0;
    let annualized_return = (end / start).powf(trading_days_per_year / days) - 1.0;

    let mean = returns.iter().sum::<f64>() / days;
    let variance = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / days;
    let daily_stddev = variance.sqrt();
    let annualized_volatility = daily_stddev * trading_days_per_year.sqrt();

    let mut peak = equity_curve[0];
    let mut max_drawdown = 0.0f64;
    for &v in equity_curve {
        peak = peak.max(v);
        max_drawdown = max_drawdown.min(v / peak - 1.0);
    }

    let rf_daily = risk_free / trading_days_per_year;
    let sharpe = if daily_stddev > 0.0 {
        Some((mean - rf_daily) / daily_stddev * trading_days_per_year.sqrt())
    } else {
        None
    };
    let downside =
        (returns.iter().map(|&r| r.min(0.0).powi(2)).sum::<f64>() / days).sqrt();
    let sortino = if downside > 0.0 {
        Some((mean - rf_daily) / downside * trading_days_per_year.sqrt())
    } else {
        None
    };

    Ok(MetricsReport {
        cumulative_return,
        annualized_return,
        daily_stddev,
        annualized_volatility,
        max_drawdown,
        sharpe,
        sortino,
    })
}

/// Trade-log CSV: date, from, to, turnover.
pub fn write_trades_csv<W: Write>(report: &BacktestReport, mut writer: W) -> Result<()> {
    let mut csv_writer = csv::Writer::from_writer(&mut writer);
    csv_writer.write_record(["date", "from", "to", "turnover"])?;
    for trade in &report.trade_log {
        csv_writer.write_record([
            trade.date.to_string(),
            trade.from.clone(),
            trade.to.clone(),
            format!("{}", trade.turnover),
        ])?;
    }
    csv_writer.flush()?;
    Ok(())
}

/// Plot-data CSV: date, portfolio equity, benchmark equity, indicator, regime.
pub fn write_plot_csv<W: Write>(
    report: &BacktestReport,
    indicator: &RiskIndicatorSeries,
    mut writer: W,
) -> Result<()> {
    if indicator.len() != report.dates.len() {
        return Err(Error::Dimension(
            "indicator and report calendars differ".into(),
        ));
    }
    let mut csv_writer = csv::Writer::from_writer(&mut writer);
    csv_writer.write_record(["date", "portfolio", "benchmark", "indicator", "regime"])?;
    for (i, date) in report.dates.iter().enumerate() {
        csv_writer.write_record([
            date.to_string(),
            format!("{}", report.equity_curve[i]),
            format!("{}", report.benchmark_curve[i]),
            format!("{}", indicator.values()[i]),
            report.regimes[i].to_string(),
        ])?;
    }
    csv_writer.flush()?;
    Ok(())
}
