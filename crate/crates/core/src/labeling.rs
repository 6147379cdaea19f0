//! Drawdown episodes and supervised-learning targets.
//!
//! A drawdown episode runs from a running peak to the subsequent minimum and
//! closes when price exceeds the peak again (or the series ends). Episodes
//! drive both the binary drawdown labels and the four regression targets,
//! and [`shift_for_actionability`] pairs features at `t` with targets at
//! `t + lead` so that a prediction made after one session's close is usable
//! for the session after next.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Peak-to-trough decline in a price series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawdownEpisode {
    pub peak_index: usize,
    pub trough_index: usize,
    /// Fractional return from peak to trough; always <= 0.
    pub depth: f64,
}

/// Prediction task for the target builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelTask {
    Classification,
    Regression,
}

/// Which detected episodes qualify as label-worthy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeSelector {
    /// The k deepest episodes by |depth|; ties go to the earlier peak.
    TopK(usize),
    /// Every episode at least this deep (fraction, e.g. 0.05 for 5%).
    Threshold(f64),
}

/// The four regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionKind {
    /// Remaining drawdown to the episode trough: `depth` at the peak,
    /// 0 at the trough, 0 outside episodes.
    DrawdownMagnitude,
    /// Return from `t` to the next trend reversal (trough inside bear
    /// segments, peak or series end inside bull segments).
    ReturnToReversal,
    /// Total return of the trend segment containing `t`, constant per segment.
    TrendTotalReturn,
    /// Episode depth, constant inside bear segments, 0 in bull segments.
    BearDrawdown,
}

/// Labeling recipe: task, episode filter, horizon, and actionability lead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub task: LabelTask,
    pub mode: EpisodeSelector,
    pub regression_kind: RegressionKind,
    /// Optional cap (in trading days past the peak) on how long an episode
    /// keeps marking labels. Truncates labels only, never detection.
    pub horizon: Option<usize>,
    /// Actionability shift: features at `t` predict targets at `t + lead`.
    pub lead: usize,
}

impl TargetSpec {
    pub fn classification(mode: EpisodeSelector) -> Self {
        Self {
            task: LabelTask::Classification,
            mode,
            regression_kind: RegressionKind::DrawdownMagnitude,
            horizon: None,
            lead: 2,
        }
    }

    pub fn regression(mode: EpisodeSelector, kind: RegressionKind) -> Self {
        Self {
            task: LabelTask::Regression,
            mode,
            regression_kind: kind,
            horizon: None,
            lead: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            EpisodeSelector::TopK(k) if k < 1 => {
                return Err(Error::Config("top_k requires k >= 1".into()))
            }
            EpisodeSelector::Threshold(f) if f <= 0.0 => {
                return Err(Error::Config("threshold fraction must be > 0".into()))
            }
            _ => {}
        }
        if self.lead < 1 {
            return Err(Error::Config("lead must be >= 1".into()));
        }
        Ok(())
    }
}

/// Detect maximal running-peak-to-subsequent-minimum declines.
///
/// An episode opens at a running peak once price falls below it, its trough
/// is the minimum before price exceeds the peak again, and episodes never
/// overlap. Output is ordered by peak index.
pub fn detect_drawdowns(prices: &[f64]) -> Result<Vec<DrawdownEpisode>> {
    if prices.len() < 2 {
        return Err(Error::Argument(
            "drawdown detection needs at least 2 prices".into(),
        ));
    }
    if let Some(i) = prices.iter().position(|p| *p <= 0.0) {
        return Err(Error::Domain(format!(
            "nonpositive price {} at position {i}",
            prices[i]
        )));
    }

    let mut episodes = Vec::new();
    let mut peak = 0usize;
    let mut trough: Option<usize> = None;

    for (i, &price) in prices.iter().enumerate().skip(1) {
        if price > prices[peak] {
            if let Some(t) = trough.take() {
                episodes.push(DrawdownEpisode {
                    peak_index: peak,
                    trough_index: t,
                    depth: prices[t] / prices[peak] - 1.0,
                });
            }
            peak = i;
        } else if price < prices[peak] {
            let improves = trough.map_or(true, |t| price < prices[t]);
            if improves {
                trough = Some(i);
            }
        }
    }
    if let Some(t) = trough {
        episodes.push(DrawdownEpisode {
            peak_index: peak,
            trough_index: t,
            depth: prices[t] / prices[peak] - 1.0,
        });
    }

    Ok(episodes)
}

/// Filter episodes down to the label-worthy ones per the selector.
pub fn qualifying_episodes(
    episodes: &[DrawdownEpisode],
    mode: EpisodeSelector,
) -> Result<Vec<DrawdownEpisode>> {
    match mode {
        EpisodeSelector::Threshold(fraction) => {
            if fraction <= 0.0 {
                return Err(Error::Argument("threshold fraction must be > 0".into()));
            }
            Ok(episodes
                .iter()
                .filter(|e| e.depth.abs() >= fraction)
                .copied()
                .collect())
        }
        EpisodeSelector::TopK(k) => {
            if k < 1 {
                return Err(Error::Argument("top_k requires k >= 1".into()));
            }
            if k > episodes.len() {
                return Err(Error::Argument(format!(
                    "top_k k={k} exceeds the {} detected episodes",
                    episodes.len()
                )));
            }
            let mut by_depth: Vec<DrawdownEpisode> = episodes.to_vec();
            // Deepest first; ties broken by the earlier peak.
            by_depth.sort_by(|a, b| {
                b.depth
                    .abs()
                    .partial_cmp(&a.depth.abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.peak_index.cmp(&b.peak_index))
            });
            let mut selected: Vec<DrawdownEpisode> = by_depth.into_iter().take(k).collect();
            selected.sort_by_key(|e| e.peak_index);
            Ok(selected)
        }
    }
}

fn within_horizon(t: usize, peak: usize, horizon: Option<usize>) -> bool {
    horizon.map_or(true, |h| t - peak <= h)
}

/// Binary drawdown labels: 1 strictly after the peak and at or before the
/// trough of a qualifying episode (subject to the horizon), else 0.
///
/// The peak day itself is labeled 0: the decline is not observable at the
/// peak close.
pub fn label_classification(prices: &[f64], spec: &TargetSpec) -> Result<Vec<u8>> {
    if spec.task != LabelTask::Classification {
        return Err(Error::Argument(
            "label_classification requires a classification target spec".into(),
        ));
    }
    let episodes = qualifying_episodes(&detect_drawdowns(prices)?, spec.mode)?;
    let mut labels = vec![0u8; prices.len()];
    for episode in &episodes {
        for t in episode.peak_index + 1..=episode.trough_index {
            if within_horizon(t, episode.peak_index, spec.horizon) {
                labels[t] = 1;
            }
        }
    }
    Ok(labels)
}

/// Trend segmentation derived from qualifying episodes.
///
/// Bear segments are the closed episode spans `[peak, trough]`; everything
/// else is bull. A bull run's trend is anchored at the trough that precedes
/// it (or the series start) and ends at the peak that follows it (or the
/// series end).
struct Segmentation {
    /// For each index: `Some(episode idx)` when inside a bear segment.
    bear: Vec<Option<usize>>,
    /// For each index: (anchor, end) of the containing trend segment.
    bounds: Vec<(usize, usize)>,
}

fn segment(prices: &[f64], episodes: &[DrawdownEpisode]) -> Segmentation {
    let n = prices.len();
    let mut bear = vec![None; n];
    for (idx, e) in episodes.iter().enumerate() {
        for t in e.peak_index..=e.trough_index {
            bear[t] = Some(idx);
        }
    }

    let mut bounds = vec![(0usize, n - 1); n];
    let mut t = 0usize;
    while t < n {
        if let Some(idx) = bear[t] {
            let e = &episodes[idx];
            for u in e.peak_index..=e.trough_index {
                bounds[u] = (e.peak_index, e.trough_index);
            }
            t = e.trough_index + 1;
        } else {
            let start = t;
            while t < n && bear[t].is_none() {
                t += 1;
            }
            // Anchor at the preceding trough (if any), end at the next peak.
            let anchor = if start == 0 { 0 } else { start - 1 };
            let end = if t < n { t } else { n - 1 };
            for u in start..t {
                bounds[u] = (anchor, end);
            }
        }
    }
    Segmentation { bear, bounds }
}

/// Regression targets per [`RegressionKind`].
pub fn label_regression(prices: &[f64], spec: &TargetSpec) -> Result<Vec<f64>> {
    if spec.task != LabelTask::Regression {
        return Err(Error::Argument(
            "label_regression requires a regression target spec".into(),
        ));
    }
    let episodes = qualifying_episodes(&detect_drawdowns(prices)?, spec.mode)?;
    let seg = segment(prices, &episodes);
    let n = prices.len();
    let mut targets = vec![0.0; n];

    for t in 0..n {
        let in_horizon = seg.bear[t]
            .map(|idx| within_horizon(t, episodes[idx].peak_index, spec.horizon))
            .unwrap_or(false);
        targets[t] = match spec.regression_kind {
            RegressionKind::DrawdownMagnitude => match seg.bear[t] {
                Some(idx) if in_horizon => {
                    prices[episodes[idx].trough_index] / prices[t] - 1.0
                }
                _ => 0.0,
            },
            RegressionKind::BearDrawdown => match seg.bear[t] {
                Some(idx) if in_horizon => episodes[idx].depth,
                _ => 0.0,
            },
            RegressionKind::ReturnToReversal => {
                let (_, end) = seg.bounds[t];
                let reversal = match seg.bear[t] {
                    Some(idx) => episodes[idx].trough_index,
                    None => end,
                };
                prices[reversal] / prices[t] - 1.0
            }
            RegressionKind::TrendTotalReturn => {
                let (anchor, end) = seg.bounds[t];
                prices[end] / prices[anchor] - 1.0
            }
        };
    }
    Ok(targets)
}

/// Pair feature rows with later targets: `(x(t), y(t + lead))`.
///
/// The default lead of 2 leaves one full session between the data a
/// prediction is made from and the session it applies to.
pub fn shift_for_actionability(
    features: &Matrix,
    targets: &[f64],
    lead: usize,
) -> Result<(Matrix, Vec<f64>)> {
    if features.rows() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} targets",
            features.rows(),
            targets.len()
        )));
    }
    if lead < 1 {
        return Err(Error::Argument("lead must be >= 1".into()));
    }
    if targets.len() <= lead {
        return Err(Error::Argument(format!(
            "need more than lead={lead} rows, got {}",
            targets.len()
        )));
    }
    let n = targets.len() - lead;
    let shifted_features = features.slice_rows(0..n);
    let shifted_targets = targets[lead..].to_vec();
    Ok((shifted_features, shifted_targets))
}
