//! Trainable models: linear, logistic, MLP, and GRU.
//!
//! Everything is built from scratch on plain `f64` math so that gradients
//! are exact and checkable against finite differences. Training is
//! mini-batch SGD with elastic-net regularization, optional input noise,
//! inverted dropout, batch normalization, gradient clipping for the GRU,
//! and early stopping on a held-out validation tail.

mod batchnorm;
mod gru;
mod mlp;

pub use batchnorm::{batch_norm_forward, BatchNormParams, BnCache, BnMode};
pub use gru::{gru_forward, GruCache, GruGrads, GruParams};
pub use mlp::{DenseCache, DenseLayer, DenseLayerGrads, MlpGrads, MlpParams};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicator::RiskIndicatorSeries;
use crate::matrix::Matrix;
use crate::preprocess::{add_input_noise, NoiseConfig};

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mix_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative given the pre-activation `pre` and output `post`.
    pub(crate) fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Output nonlinearity implied by architecture and task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Head {
    Sigmoid,
    Identity,
}

impl Head {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Head::Sigmoid => sigmoid(x),
            Head::Identity => x,
        }
    }

    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Head::Sigmoid => y * (1.0 - y),
            Head::Identity => 1.0,
        }
    }
}

/// Model family and shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Weighted sum with identity output; regression only.
    Linear,
    /// Weighted sum with sigmoid output; classification only.
    Logistic,
    /// Feed-forward network; `layer_sizes` are the hidden widths.
    Mlp {
        layer_sizes: Vec<usize>,
        activation: Activation,
    },
    /// Gated recurrent cell over input windows, linear readout of the
    /// final hidden state.
    Gru { hidden_size: usize },
}

/// Prediction task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

/// Architecture plus the training-time stochastic switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub task: Task,
    /// Hidden-unit dropout probability in [0, 1).
    pub dropout_p: f64,
    pub batch_norm: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        match &self.architecture {
            Architecture::Linear => {
                if self.task != Task::Regression {
                    return Err(Error::Config(
                        "linear architecture requires the regression task".into(),
                    ));
                }
                if self.dropout_p > 0.0 || self.batch_norm {
                    return Err(Error::Config(
                        "dropout and batch norm need hidden layers".into(),
                    ));
                }
            }
            Architecture::Logistic => {
                if self.task != Task::Classification {
                    return Err(Error::Config(
                        "logistic architecture requires the classification task".into(),
                    ));
                }
                if self.dropout_p > 0.0 || self.batch_norm {
                    return Err(Error::Config(
                        "dropout and batch norm need hidden layers".into(),
                    ));
                }
            }
            Architecture::Mlp { layer_sizes, .. } => {
                if layer_sizes.is_empty() || layer_sizes.iter().any(|&s| s == 0) {
                    return Err(Error::Config(
                        "mlp layer_sizes must be nonempty positive widths".into(),
                    ));
                }
            }
            Architecture::Gru { hidden_size } => {
                if *hidden_size == 0 {
                    return Err(Error::Config("gru hidden_size must be >= 1".into()));
                }
                if self.batch_norm {
                    return Err(Error::Config(
                        "batch norm is not supported for the gru architecture".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn head(&self) -> Head {
        match (&self.architecture, self.task) {
            (Architecture::Linear, _) => Head::Identity,
            (Architecture::Logistic, _) => Head::Sigmoid,
            (_, Task::Classification) => Head::Sigmoid,
            (_, Task::Regression) => Head::Identity,
        }
    }

    fn hidden_activation(&self) -> Activation {
        match &self.architecture {
            Architecture::Mlp { activation, .. } => *activation,
            _ => Activation::Tanh,
        }
    }
}

/// Elastic-net mix and early-stopping patience.
///
/// The penalty added to the data loss is
/// `mix * lambda * sum|w| + (1 - mix) * lambda * 0.5 * sum w^2`,
/// over weights only; biases and batch-norm parameters are excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationConfig {
    pub lambda: f64,
    /// 1 is pure L1, 0 is pure L2.
    pub mix: f64,
    pub early_stopping_patience: usize,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            mix: 0.0,
            early_stopping_patience: 10,
        }
    }
}

impl RegularizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::Config("mix must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Data-term loss function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

/// SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// The trailing fraction of rows held out for validation; when it
    /// floors to zero rows, early stopping is disabled.
    pub validation_fraction: f64,
    pub input_noise: Option<NoiseConfig>,
    pub loss: LossKind,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) || self.validation_fraction <= 0.0 {
            return Err(Error::Config(
                "validation_fraction must be in (0, 1)".into(),
            ));
        }
        if let Some(noise) = &self.input_noise {
            if noise.sigma < 0.0 {
                return Err(Error::Config("input noise sigma must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Learned parameters for any architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelParams {
    Dense(MlpParams),
    Gru(GruParams),
}

impl ModelParams {
    /// Apply `f` to every weight entry (biases and batch-norm excluded).
    fn for_each_weight(&self, mut f: impl FnMut(f64)) {
        match self {
            ModelParams::Dense(p) => {
                for layer in &p.layers {
                    for &w in layer.weights.data() {
                        f(w);
                    }
                }
            }
            ModelParams::Gru(p) => {
                for m in [
                    &p.w_update,
                    &p.w_reset,
                    &p.w_candidate,
                    &p.u_update,
                    &p.u_reset,
                    &p.u_candidate,
                    &p.readout_weights,
                ] {
                    for &w in m.data() {
                        f(w);
                    }
                }
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            ModelParams::Dense(p) => p.parameter_count(),
            ModelParams::Gru(p) => p.parameter_count(),
        }
    }
}

/// Training dataset, already temporally ordered.
#[derive(Debug, Clone)]
pub enum Dataset {
    /// One feature row per example (linear, logistic, MLP).
    Rows { features: Matrix, targets: Vec<f64> },
    /// One fixed-length window per example (GRU).
    Sequences {
        samples: Vec<Matrix>,
        targets: Vec<f64>,
    },
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Rows { targets, .. } => targets.len(),
            Dataset::Sequences { targets, .. } => targets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn targets(&self) -> &[f64] {
        match self {
            Dataset::Rows { targets, .. } => targets,
            Dataset::Sequences { targets, .. } => targets,
        }
    }

    fn input_width(&self) -> Result<usize> {
        match self {
            Dataset::Rows { features, targets } => {
                if features.rows() != targets.len() {
                    return Err(Error::Dimension(format!(
                        "{} feature rows vs {} targets",
                        features.rows(),
                        targets.len()
                    )));
                }
                Ok(features.cols())
            }
            Dataset::Sequences { samples, targets } => {
                if samples.len() != targets.len() {
                    return Err(Error::Dimension(format!(
                        "{} samples vs {} targets",
                        samples.len(),
                        targets.len()
                    )));
                }
                let width = samples.first().map(|s| s.cols()).ok_or_else(|| {
                    Error::Argument("empty dataset".into())
                })?;
                Ok(width)
            }
        }
    }
}

/// Dropout/batch-norm state for one forward pass.
pub(crate) struct DropoutDraw {
    rng: Option<ChaCha8Rng>,
    bn_train: bool,
}

impl DropoutDraw {
    fn infer() -> Self {
        Self {
            rng: None,
            bn_train: false,
        }
    }

    fn train(seed: u64, step: u64) -> Self {
        Self {
            rng: Some(ChaCha8Rng::seed_from_u64(mix_seed(seed, step))),
            bn_train: true,
        }
    }

    /// Dropout active, batch norm frozen on running statistics.
    fn mc_dropout(seed: u64, step: u64) -> Self {
        Self {
            rng: Some(ChaCha8Rng::seed_from_u64(mix_seed(seed, step))),
            bn_train: false,
        }
    }

    pub fn is_train(&self) -> bool {
        self.bn_train
    }

    /// Inverted-dropout mask: entries are `1/(1-p)` (kept) or 0 (dropped).
    pub fn mask(&mut self, p: f64, rows: usize, cols: usize) -> Option<Matrix> {
        let rng = self.rng.as_mut()?;
        if p <= 0.0 {
            return None;
        }
        let scale = 1.0 / (1.0 - p);
        let mut mask = Matrix::zeros(rows, cols);
        for v in mask.data_mut() {
            *v = if rng.gen::<f64>() < p { 0.0 } else { scale };
        }
        Some(mask)
    }
}

/// Whether a forward pass behaves like training or inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Dropout active (seeded by `(seed, step)`), batch norm on batch stats.
    Train { seed: u64, step: u64 },
    Infer,
}

/// A batch of inputs for [`forward`].
#[derive(Debug, Clone)]
pub enum Batch<'a> {
    Rows(&'a Matrix),
    Sequences(Vec<&'a Matrix>),
}

/// Opaque activations cached by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub enum ForwardCache {
    Dense(DenseCache),
    Gru(GruCache),
}

/// Parameter gradients, shaped like the parameters.
#[derive(Debug, Clone)]
pub enum Gradients {
    Dense(MlpGrads),
    Gru(GruGrads),
}

impl Gradients {
    fn for_each_weight_grad(
        &mut self,
        params: &ModelParams,
        mut f: impl FnMut(f64, &mut f64),
    ) {
        match (self, params) {
            (Gradients::Dense(g), ModelParams::Dense(p)) => {
                for (gl, pl) in g.layers.iter_mut().zip(&p.layers) {
                    for (gw, &pw) in gl.weights.data_mut().iter_mut().zip(pl.weights.data()) {
                        f(pw, gw);
                    }
                }
            }
            (Gradients::Gru(g), ModelParams::Gru(p)) => {
                let pairs: [(&mut Matrix, &Matrix); 7] = [
                    (&mut g.w_update, &p.w_update),
                    (&mut g.w_reset, &p.w_reset),
                    (&mut g.w_candidate, &p.w_candidate),
                    (&mut g.u_update, &p.u_update),
                    (&mut g.u_reset, &p.u_reset),
                    (&mut g.u_candidate, &p.u_candidate),
                    (&mut g.readout_weights, &p.readout_weights),
                ];
                for (gm, pm) in pairs {
                    for (gw, &pw) in gm.data_mut().iter_mut().zip(pm.data()) {
                        f(pw, gw);
                    }
                }
            }
            _ => unreachable!("gradients and parameters always share the architecture"),
        }
    }

    fn global_norm(&self) -> f64 {
        let mut sum = 0.0;
        let mut add = |s: &[f64]| {
            for &g in s {
                sum += g * g;
            }
        };
        match self {
            Gradients::Dense(g) => {
                for l in &g.layers {
                    add(l.weights.data());
                    add(&l.biases);
                    if let Some(v) = &l.gamma {
                        add(v);
                    }
                    if let Some(v) = &l.beta {
                        add(v);
                    }
                }
            }
            Gradients::Gru(g) => {
                for m in [
                    &g.w_update,
                    &g.w_reset,
                    &g.w_candidate,
                    &g.u_update,
                    &g.u_reset,
                    &g.u_candidate,
                    &g.readout_weights,
                ] {
                    add(m.data());
                }
                add(&g.b_update);
                add(&g.b_reset);
                add(&g.b_candidate);
                sum += g.readout_bias * g.readout_bias;
            }
        }
        sum.sqrt()
    }

    fn scale(&mut self, factor: f64) {
        let scale = |s: &mut [f64]| {
            for g in s {
                *g *= factor;
            }
        };
        match self {
            Gradients::Dense(g) => {
                for l in &mut g.layers {
                    scale(l.weights.data_mut());
                    scale(&mut l.biases);
                    if let Some(v) = &mut l.gamma {
                        scale(v);
                    }
                    if let Some(v) = &mut l.beta {
                        scale(v);
                    }
                }
            }
            Gradients::Gru(g) => {
                for m in [
                    &mut g.w_update,
                    &mut g.w_reset,
                    &mut g.w_candidate,
                    &mut g.u_update,
                    &mut g.u_reset,
                    &mut g.u_candidate,
                    &mut g.readout_weights,
                ] {
                    scale(m.data_mut());
                }
                scale(&mut g.b_update);
                scale(&mut g.b_reset);
                scale(&mut g.b_candidate);
                g.readout_bias *= factor;
            }
        }
    }
}

/// Glorot-uniform initialization, deterministic given `config.seed`.
pub fn initialize_params(config: &ModelConfig, input_width: usize) -> Result<ModelParams> {
    config.validate()?;
    if input_width == 0 {
        return Err(Error::Argument("input width must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut glorot = |rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        m
    };

    match &config.architecture {
        Architecture::Linear | Architecture::Logistic => {
            let layer = DenseLayer {
                weights: glorot(1, input_width, input_width, 1),
                biases: vec![0.0],
                batch_norm: None,
            };
            Ok(ModelParams::Dense(MlpParams {
                layers: vec![layer],
            }))
        }
        Architecture::Mlp { layer_sizes, .. } => {
            let mut widths = vec![input_width];
            widths.extend_from_slice(layer_sizes);
            widths.push(1);
            let mut layers = Vec::with_capacity(widths.len() - 1);
            for w in widths.windows(2) {
                let (fan_in, fan_out) = (w[0], w[1]);
                let is_output = layers.len() == widths.len() - 2;
                layers.push(DenseLayer {
                    weights: glorot(fan_out, fan_in, fan_in, fan_out),
                    biases: vec![0.0; fan_out],
                    batch_norm: (config.batch_norm && !is_output)
                        .then(|| BatchNormParams::new(fan_out)),
                });
            }
            Ok(ModelParams::Dense(MlpParams { layers }))
        }
        Architecture::Gru { hidden_size } => {
            let h = *hidden_size;
            Ok(ModelParams::Gru(GruParams {
                w_update: glorot(h, input_width, input_width, h),
                w_reset: glorot(h, input_width, input_width, h),
                w_candidate: glorot(h, input_width, input_width, h),
                u_update: glorot(h, h, h, h),
                u_reset: glorot(h, h, h, h),
                u_candidate: glorot(h, h, h, h),
                b_update: vec![0.0; h],
                b_reset: vec![0.0; h],
                b_candidate: vec![0.0; h],
                readout_weights: glorot(1, h, h, 1),
                readout_bias: 0.0,
            }))
        }
    }
}

/// Run a batch through the model.
///
/// Classification outputs are probabilities in (0, 1) through the sigmoid
/// head; regression outputs are unbounded. Dropout only fires in train
/// mode, with survivors pre-scaled so inference needs no adjustment.
pub fn forward(
    config: &ModelConfig,
    params: &ModelParams,
    batch: &Batch,
    mode: ForwardMode,
) -> Result<(Vec<f64>, ForwardCache)> {
    let mut draw = match mode {
        ForwardMode::Train { seed, step } => DropoutDraw::train(seed, step),
        ForwardMode::Infer => DropoutDraw::infer(),
    };
    forward_with_draw(config, params, batch, &mut draw)
}

fn forward_with_draw(
    config: &ModelConfig,
    params: &ModelParams,
    batch: &Batch,
    draw: &mut DropoutDraw,
) -> Result<(Vec<f64>, ForwardCache)> {
    match (params, batch) {
        (ModelParams::Dense(p), Batch::Rows(rows)) => {
            let (preds, cache) = mlp::dense_forward(
                p,
                rows,
                config.hidden_activation(),
                config.head(),
                config.dropout_p,
                draw,
            )?;
            Ok((preds, ForwardCache::Dense(cache)))
        }
        (ModelParams::Gru(p), Batch::Sequences(seqs)) => {
            let (preds, cache) =
                gru::gru_forward_batch(p, seqs, config.head(), config.dropout_p, draw)?;
            Ok((preds, ForwardCache::Gru(cache)))
        }
        (ModelParams::Dense(_), Batch::Sequences(_)) => Err(Error::Argument(
            "dense architectures take row batches, not sequences".into(),
        )),
        (ModelParams::Gru(_), Batch::Rows(_)) => Err(Error::Argument(
            "the gru architecture takes sequence batches".into(),
        )),
    }
}

/// Data loss plus the elastic-net penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// True when a cross-entropy prediction had to be clamped away from
    /// exactly 0 or 1.
    pub clamped: bool,
}

const CE_CLAMP: f64 = 1e-12;

/// Mean data loss over the batch plus the weight penalty.
pub fn loss(
    predictions: &[f64],
    targets: &[f64],
    kind: LossKind,
    reg: &RegularizationConfig,
    params: &ModelParams,
) -> Result<LossValue> {
    if predictions.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    reg.validate()?;

    let mut clamped = false;
    let mut total = 0.0;
    match kind {
        LossKind::CrossEntropy => {
            for (&p, &y) in predictions.iter().zip(targets) {
                if y != 0.0 && y != 1.0 {
                    return Err(Error::Argument(format!(
                        "cross-entropy target must be 0 or 1, got {y}"
                    )));
                }
                let p_clamped = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
                if p_clamped != p {
                    clamped = true;
                }
                total -= y * p_clamped.ln() + (1.0 - y) * (1.0 - p_clamped).ln();
            }
        }
        LossKind::Mse => {
            for (&p, &y) in predictions.iter().zip(targets) {
                total += (y - p) * (y - p);
            }
        }
    }
    let data = total / predictions.len() as f64;
    Ok(LossValue {
        value: data + weight_penalty(params, reg),
        clamped,
    })
}

/// `mix*lambda*sum|w| + (1-mix)*lambda*0.5*sum w^2` over weights only.
pub fn weight_penalty(params: &ModelParams, reg: &RegularizationConfig) -> f64 {
    if reg.lambda == 0.0 {
        return 0.0;
    }
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    params.for_each_weight(|w| {
        l1 += w.abs();
        l2 += w * w;
    });
    reg.mix * reg.lambda * l1 + (1.0 - reg.mix) * reg.lambda * 0.5 * l2
}

/// Gradient of the mean data loss with respect to each prediction.
pub fn loss_gradient(predictions: &[f64], targets: &[f64], kind: LossKind) -> Result<Vec<f64>> {
    if predictions.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let m = predictions.len() as f64;
    Ok(match kind {
        LossKind::CrossEntropy => predictions
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
                (-y / p + (1.0 - y) / (1.0 - p)) / m
            })
            .collect(),
        LossKind::Mse => predictions
            .iter()
            .zip(targets)
            .map(|(&p, &y)| 2.0 * (p - y) / m)
            .collect(),
    })
}

/// Exact gradients of the regularized loss for every parameter.
///
/// `d_predictions` is the gradient of the data loss with respect to each
/// prediction in the batch that produced `cache`.
pub fn backward(
    config: &ModelConfig,
    params: &ModelParams,
    cache: &ForwardCache,
    d_predictions: &[f64],
    reg: &RegularizationConfig,
) -> Result<Gradients> {
    let mut grads = backward_data(config, params, cache, d_predictions)?;
    add_penalty_gradients(&mut grads, params, reg, true);
    Ok(grads)
}

fn backward_data(
    config: &ModelConfig,
    params: &ModelParams,
    cache: &ForwardCache,
    d_predictions: &[f64],
) -> Result<Gradients> {
    match (params, cache) {
        (ModelParams::Dense(p), ForwardCache::Dense(c)) => Ok(Gradients::Dense(
            mlp::dense_backward(p, c, d_predictions, config.hidden_activation(), config.head())?,
        )),
        (ModelParams::Gru(p), ForwardCache::Gru(c)) => Ok(Gradients::Gru(gru::gru_backward(
            p,
            c,
            d_predictions,
            config.head(),
        )?)),
        _ => Err(Error::Argument(
            "forward cache does not match the model architecture".into(),
        )),
    }
}

/// Add elastic-net gradients. The L1 subgradient is only added when
/// `include_l1` is set; the training loop instead handles L1 with a
/// proximal soft-threshold step so weights can reach exactly zero.
fn add_penalty_gradients(
    grads: &mut Gradients,
    params: &ModelParams,
    reg: &RegularizationConfig,
    include_l1: bool,
) {
    if reg.lambda == 0.0 {
        return;
    }
    let l2 = (1.0 - reg.mix) * reg.lambda;
    let l1 = if include_l1 { reg.mix * reg.lambda } else { 0.0 };
    grads.for_each_weight_grad(params, |w, g| {
        *g += l2 * w;
        // Subgradient of |w| at zero is taken as 0 (signum(0.0) is 1.0).
        if w != 0.0 {
            *g += l1 * w.signum();
        }
    });
}

/// Per-epoch losses recorded during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// True when cross-entropy clamping fired during this epoch.
    pub clamped: bool,
}

/// A trained model: configuration, learned parameters, and history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub loss_kind: LossKind,
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    pub stopped_epoch: usize,
}

const MODEL_DOC_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    model: TrainedModel,
}

impl TrainedModel {
    /// Versioned JSON document; parameter round-trips are bit-exact.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument {
            version: MODEL_DOC_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.version != MODEL_DOC_VERSION {
            return Err(Error::Config(format!(
                "unsupported model document version {}",
                doc.version
            )));
        }
        Ok(doc.model)
    }

    /// Single-sample forward pass.
    pub fn forward_sample(&self, sample: &Sample, mode: ForwardMode) -> Result<f64> {
        let (preds, _) = match sample {
            Sample::Row(row) => {
                let batch = Matrix::from_rows(&[row.to_vec()])?;
                forward(&self.config, &self.params, &Batch::Rows(&batch), mode)?
            }
            Sample::Sequence(seq) => forward(
                &self.config,
                &self.params,
                &Batch::Sequences(vec![seq]),
                mode,
            )?,
        };
        Ok(preds[0])
    }

    /// Infer-mode predictions for a whole feature matrix.
    ///
    /// Dense models predict row by row. The GRU consumes the matrix as one
    /// chronological sequence and emits the readout of every step's hidden
    /// state, so early rows see only a short history.
    pub fn predict_matrix(&self, features: &Matrix) -> Result<Vec<f64>> {
        match &self.params {
            ModelParams::Dense(_) => {
                let (preds, _) = forward(
                    &self.config,
                    &self.params,
                    &Batch::Rows(features),
                    ForwardMode::Infer,
                )?;
                Ok(preds)
            }
            ModelParams::Gru(p) => {
                let (states, _) = gru::gru_forward(p, features)?;
                let head = self.config.head();
                let w = p.readout_weights.row(0);
                Ok(states
                    .iter_rows()
                    .map(|h| {
                        let pre: f64 =
                            h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + p.readout_bias;
                        head.apply(pre)
                    })
                    .collect())
            }
        }
    }

    /// Monte Carlo dropout: `n_samples` stochastic forwards.
    ///
    /// Returns the sample mean and population standard deviation;
    /// deterministic given `seed`. Batch norm stays on running statistics.
    pub fn mc_dropout_predict(
        &self,
        sample: &Sample,
        n_samples: usize,
        seed: u64,
    ) -> Result<(f64, f64)> {
        if n_samples == 0 {
            return Err(Error::Argument("n_samples must be >= 1".into()));
        }
        let mut outputs = Vec::with_capacity(n_samples);
        for step in 0..n_samples {
            let mut draw = DropoutDraw::mc_dropout(seed, step as u64);
            let (preds, _) = match sample {
                Sample::Row(row) => {
                    let batch = Matrix::from_rows(&[row.to_vec()])?;
                    forward_with_draw(&self.config, &self.params, &Batch::Rows(&batch), &mut draw)?
                }
                Sample::Sequence(seq) => forward_with_draw(
                    &self.config,
                    &self.params,
                    &Batch::Sequences(vec![seq]),
                    &mut draw,
                )?,
            };
            outputs.push(preds[0]);
        }
        // Identical outputs (no dropout, or a single sample) have exactly
        // zero spread; the general path would reintroduce rounding noise.
        if outputs.iter().all(|&o| o == outputs[0]) {
            return Ok((outputs[0], 0.0));
        }
        let mean = outputs.iter().sum::<f64>() / outputs.len() as f64;
        let variance =
            outputs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / outputs.len() as f64;
        Ok((mean, variance.sqrt()))
    }
}

/// One input example.
#[derive(Debug, Clone)]
pub enum Sample<'a> {
    Row(&'a [f64]),
    Sequence(&'a Matrix),
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn sgd_step(params: &mut ModelParams, grads: &Gradients, lr: f64, l1_step: f64) {
    let update_weights = |w: &mut Matrix, g: &Matrix| {
        for (wv, &gv) in w.data_mut().iter_mut().zip(g.data()) {
            *wv = soft_threshold(*wv - lr * gv, l1_step);
        }
    };
    let update_plain = |b: &mut [f64], g: &[f64]| {
        for (bv, &gv) in b.iter_mut().zip(g) {
            *bv -= lr * gv;
        }
    };
    match (params, grads) {
        (ModelParams::Dense(p), Gradients::Dense(g)) => {
            for (pl, gl) in p.layers.iter_mut().zip(&g.layers) {
                update_weights(&mut pl.weights, &gl.weights);
                update_plain(&mut pl.biases, &gl.biases);
                if let (Some(bn), Some(dg), Some(db)) =
                    (pl.batch_norm.as_mut(), gl.gamma.as_ref(), gl.beta.as_ref())
                {
                    update_plain(&mut bn.gamma, dg);
                    update_plain(&mut bn.beta, db);
                }
            }
        }
        (ModelParams::Gru(p), Gradients::Gru(g)) => {
            update_weights(&mut p.w_update, &g.w_update);
            update_weights(&mut p.w_reset, &g.w_reset);
            update_weights(&mut p.w_candidate, &g.w_candidate);
            update_weights(&mut p.u_update, &g.u_update);
            update_weights(&mut p.u_reset, &g.u_reset);
            update_weights(&mut p.u_candidate, &g.u_candidate);
            update_plain(&mut p.b_update, &g.b_update);
            update_plain(&mut p.b_reset, &g.b_reset);
            update_plain(&mut p.b_candidate, &g.b_candidate);
            update_weights(&mut p.readout_weights, &g.readout_weights);
            p.readout_bias -= lr * g.readout_bias;
        }
        _ => unreachable!("gradients and parameters always share the architecture"),
    }
}

const GRU_CLIP_NORM: f64 = 5.0;
const BN_MOMENTUM: f64 = 0.1;

fn dataset_slice_loss(
    config: &ModelConfig,
    params: &ModelParams,
    dataset: &Dataset,
    range: std::ops::Range<usize>,
    loss_kind: LossKind,
    reg: &RegularizationConfig,
) -> Result<LossValue> {
    let (predictions, targets): (Vec<f64>, Vec<f64>) = match dataset {
        Dataset::Rows { features, targets } => {
            let slice = features.slice_rows(range.clone());
            let (preds, _) = forward(config, params, &Batch::Rows(&slice), ForwardMode::Infer)?;
            (preds, targets[range].to_vec())
        }
        Dataset::Sequences { samples, targets } => {
            let seqs: Vec<&Matrix> = samples[range.clone()].iter().collect();
            let (preds, _) =
                forward(config, params, &Batch::Sequences(seqs), ForwardMode::Infer)?;
            (preds, targets[range].to_vec())
        }
    };
    loss(&predictions, &targets, loss_kind, reg, params)
}

/// Train by mini-batch SGD with early stopping.
///
/// The dataset must be temporally ordered: the trailing
/// `validation_fraction` of examples becomes the validation set and only
/// the leading rows are shuffled (per epoch, seeded). Training stops when
/// the validation loss has not improved for `early_stopping_patience`
/// epochs, or at `max_epochs`; the returned parameters are those of the
/// best validation epoch. Everything is deterministic given `config.seed`.
pub fn train(
    config: &ModelConfig,
    dataset: &Dataset,
    train_config: &TrainConfig,
    reg: &RegularizationConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    train_config.validate()?;
    reg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Argument("empty dataset".into()));
    }
    match (&config.architecture, dataset) {
        (Architecture::Gru { .. }, Dataset::Rows { .. }) => {
            return Err(Error::Config(
                "the gru architecture needs a windowed (sequence) dataset".into(),
            ))
        }
        (Architecture::Gru { .. }, Dataset::Sequences { .. }) => {}
        (_, Dataset::Sequences { .. }) => {
            return Err(Error::Config(
                "dense architectures need a row dataset, not sequences".into(),
            ))
        }
        _ => {}
    }
    match (config.task, train_config.loss) {
        (Task::Classification, LossKind::Mse) => {
            return Err(Error::Config(
                "classification training uses the cross_entropy loss".into(),
            ))
        }
        (Task::Regression, LossKind::CrossEntropy) => {
            return Err(Error::Config(
                "regression training uses the mse loss".into(),
            ))
        }
        _ => {}
    }
    if train_config.loss == LossKind::CrossEntropy {
        if let Some(&bad) = dataset.targets().iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Argument(format!(
                "classification target must be 0 or 1, got {bad}"
            )));
        }
    }

    let input_width = dataset.input_width()?;
    let n = dataset.len();
    let val_len = ((n as f64) * train_config.validation_fraction).floor() as usize;
    let train_len = n - val_len;
    if train_len == 0 {
        return Err(Error::Argument(
            "validation fraction leaves no training rows".into(),
        ));
    }

    let mut params = initialize_params(config, input_width)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x5A17));
    let mut history: Vec<EpochStats> = Vec::new();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut bad_epochs = 0usize;
    let mut global_step: u64 = 0;

    for epoch in 0..train_config.max_epochs {
        let mut order: Vec<usize> = (0..train_len).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);

        let mut epoch_clamped = false;
        let mut chunks: Vec<Vec<usize>> = order
            .chunks(train_config.batch_size)
            .map(|c| c.to_vec())
            .collect();
        // Batch norm cannot normalize a single row; fold a trailing
        // singleton into the previous batch.
        if config.batch_norm && chunks.len() > 1 {
            if let Some(last) = chunks.last() {
                if last.len() == 1 {
                    let last = chunks.pop().unwrap();
                    chunks.last_mut().unwrap().extend(last);
                }
            }
        }

        for chunk in &chunks {
            let targets: Vec<f64> = chunk.iter().map(|&i| dataset.targets()[i]).collect();
            let mode = ForwardMode::Train {
                seed: config.seed,
                step: global_step,
            };
            let noise = train_config
                .input_noise
                .as_ref()
                .filter(|n| n.sigma > 0.0);
            let (predictions, cache) = match dataset {
                Dataset::Rows { features, .. } => {
                    let rows: Vec<Vec<f64>> =
                        chunk.iter().map(|&i| features.row(i).to_vec()).collect();
                    let mut batch = Matrix::from_rows(&rows)?;
                    if let Some(noise) = noise {
                        batch = add_input_noise(
                            &batch,
                            &NoiseConfig {
                                sigma: noise.sigma,
                                seed: mix_seed(noise.seed, global_step),
                            },
                        )?;
                    }
                    forward(config, &params, &Batch::Rows(&batch), mode)?
                }
                Dataset::Sequences { samples, .. } => {
                    let owned: Vec<Matrix>;
                    let refs: Vec<&Matrix> = match noise {
                        Some(noise) => {
                            owned = chunk
                                .iter()
                                .enumerate()
                                .map(|(k, &i)| {
                                    add_input_noise(
                                        &samples[i],
                                        &NoiseConfig {
                                            sigma: noise.sigma,
                                            seed: mix_seed(
                                                mix_seed(noise.seed, global_step),
                                                k as u64,
                                            ),
                                        },
                                    )
                                })
                                .collect::<Result<Vec<_>>>()?;
                            owned.iter().collect()
                        }
                        None => chunk.iter().map(|&i| &samples[i]).collect(),
                    };
                    forward(config, &params, &Batch::Sequences(refs), mode)?
                }
            };
            let batch_loss = loss(&predictions, &targets, train_config.loss, reg, &params)?;
            epoch_clamped |= batch_loss.clamped;
            if !batch_loss.value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    learning_rate: train_config.learning_rate,
                });
            }

            let d_predictions = loss_gradient(&predictions, &targets, train_config.loss)?;
            let mut grads = backward_data(config, &params, &cache, &d_predictions)?;
            // L2 flows through the gradient; L1 is handled proximally below.
            add_penalty_gradients(&mut grads, &params, reg, false);
            if matches!(params, ModelParams::Gru(_)) {
                let norm = grads.global_norm();
                if norm > GRU_CLIP_NORM {
                    grads.scale(GRU_CLIP_NORM / norm);
                }
            }
            let l1_step = train_config.learning_rate * reg.mix * reg.lambda;
            sgd_step(&mut params, &grads, train_config.learning_rate, l1_step);

            // Fold batch statistics into the running ones.
            if let (ModelParams::Dense(p), ForwardCache::Dense(c)) = (&mut params, &cache) {
                for (layer, stats) in p.layers.iter_mut().zip(c.bn_batch_stats()) {
                    if let (Some(bn), Some((mean, var))) = (layer.batch_norm.as_mut(), stats) {
                        bn.update_running(&mean, &var, BN_MOMENTUM);
                    }
                }
            }
            global_step += 1;
        }

        let train_eval =
            dataset_slice_loss(config, &params, dataset, 0..train_len, train_config.loss, reg)?;
        epoch_clamped |= train_eval.clamped;
        if !train_eval.value.is_finite() {
            return Err(Error::Diverged {
                epoch,
                learning_rate: train_config.learning_rate,
            });
        }

        let val_eval = if val_len > 0 {
            let zero_reg = RegularizationConfig {
                lambda: 0.0,
                ..*reg
            };
            let v = dataset_slice_loss(
                config,
                &params,
                dataset,
                train_len..n,
                train_config.loss,
                &zero_reg,
            )?;
            epoch_clamped |= v.clamped;
            if !v.value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    learning_rate: train_config.learning_rate,
                });
            }
            Some(v.value)
        } else {
            None
        };

        history.push(EpochStats {
            train_loss: train_eval.value,
            val_loss: val_eval,
            clamped: epoch_clamped,
        });

        if let Some(val) = val_eval {
            let improved = best.as_ref().map_or(true, |(b, _)| val < *b);
            if improved {
                best = Some((val, params.clone()));
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
                if bad_epochs > reg.early_stopping_patience {
                    break;
                }
            }
        }
    }

    let stopped_epoch = history.len() - 1;
    let final_params = match best {
        Some((_, p)) => p,
        None => params,
    };
    Ok(TrainedModel {
        config: config.clone(),
        loss_kind: train_config.loss,
        params: final_params,
        history,
        stopped_epoch,
    })
}

/// Map model outputs over dated features into a risk indicator.
///
/// Classification: `1 - 2 * P(drawdown)`, so certainty of a drawdown maps
/// to -1 and certainty of calm to +1. Regression: `tanh` of the prediction
/// standardized over the series (a zero-spread series maps to all zeros).
pub fn indicator_from_model(
    model: &TrainedModel,
    features: &Matrix,
    dates: &[NaiveDate],
) -> Result<RiskIndicatorSeries> {
    if features.rows() != dates.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} dates",
            features.rows(),
            dates.len()
        )));
    }
    let predictions = model.predict_matrix(features)?;
    let values: Vec<f64> = match model.config.task {
        Task::Classification => predictions.iter().map(|p| 1.0 - 2.0 * p).collect(),
        Task::Regression => {
            let n = predictions.len() as f64;
            let mean = predictions.iter().sum::<f64>() / n;
            let sd =
                (predictions.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n).sqrt();
            predictions
                .iter()
                .map(|p| if sd > 0.0 { ((p - mean) / sd).tanh() } else { 0.0 })
                .collect()
        }
    };
    let values = values.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    RiskIndicatorSeries::new(dates.to_vec(), values)
}

/// Exponential moving average with `alpha = 2 / (span + 1)`.
///
/// A span of 1 is the identity; output stays within `[-1, 1]` because each
/// value is a convex combination of inputs.
pub fn smooth_indicator(series: &RiskIndicatorSeries, ema_span: usize) -> Result<RiskIndicatorSeries> {
    if ema_span < 1 {
        return Err(Error::Argument("ema_span must be >= 1".into()));
    }
    let alpha = 2.0 / (ema_span as f64 + 1.0);
    let mut smoothed = Vec::with_capacity(series.len());
    let mut state: Option<f64> = None;
    for &v in series.values() {
        let next = match state {
            None => v,
            Some(prev) => prev + alpha * (v - prev),
        };
        smoothed.push(next);
        state = Some(next);
    }
    RiskIndicatorSeries::new(series.dates().to_vec(), smoothed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_params(weights: &[f64], bias: f64) -> ModelParams {
        ModelParams::Dense(MlpParams {
            layers: vec![DenseLayer {
                weights: Matrix::from_rows(&[weights.to_vec()]).unwrap(),
                biases: vec![bias],
                batch_norm: None,
            }],
        })
    }

    fn config(architecture: Architecture, task: Task) -> ModelConfig {
        ModelConfig {
            architecture,
            task,
            dropout_p: 0.0,
            batch_norm: false,
            seed: 0,
        }
    }

    #[test]
    fn linear_forward_is_dot_product() {
        let cfg = config(Architecture::Linear, Task::Regression);
        let params = linear_params(&[1.0, 1.0], 0.0);
        let batch = Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        let (preds, _) = forward(&cfg, &params, &Batch::Rows(&batch), ForwardMode::Infer).unwrap();
        assert_eq!(preds, vec![5.0]);
    }

    #[test]
    fn zero_weight_mlp_outputs_half() {
        let cfg = config(
            Architecture::Mlp {
                layer_sizes: vec![3],
                activation: Activation::Tanh,
            },
            Task::Classification,
        );
        let params = ModelParams::Dense(MlpParams {
            layers: vec![
                DenseLayer {
                    weights: Matrix::zeros(3, 2),
                    biases: vec![0.0; 3],
                    batch_norm: None,
                },
                DenseLayer {
                    weights: Matrix::zeros(1, 3),
                    biases: vec![0.0],
                    batch_norm: None,
                },
            ],
        });
        let batch = Matrix::from_rows(&[vec![4.0, -7.0], vec![0.1, 0.2]]).unwrap();
        let (preds, _) = forward(&cfg, &params, &Batch::Rows(&batch), ForwardMode::Infer).unwrap();
        for p in preds {
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn mlp_matches_straight_line_reimplementation() {
        // Independent oracle: an explicit nested-loop evaluation of the
        // 2-4-1 tanh network equations.
        let cfg = config(
            Architecture::Mlp {
                layer_sizes: vec![4],
                activation: Activation::Tanh,
            },
            Task::Regression,
        );
        let params = initialize_params(&cfg, 2).unwrap();
        let x = [0.3, -1.2];

        let oracle = {
            let ModelParams::Dense(p) = &params else { unreachable!() };
            let mut hidden = [0.0f64; 4];
            for u in 0..4 {
                let mut z = p.layers[0].biases[u];
                for i in 0..2 {
                    z += p.layers[0].weights.get(u, i) * x[i];
                }
                hidden[u] = z.tanh();
            }
            let mut out = p.layers[1].biases[0];
            for u in 0..4 {
                out += p.layers[1].weights.get(0, u) * hidden[u];
            }
            out
        };

        let batch = Matrix::from_rows(&[x.to_vec()]).unwrap();
        let (preds, _) = forward(&cfg, &params, &Batch::Rows(&batch), ForwardMode::Infer).unwrap();
        assert!((preds[0] - oracle).abs() < 1e-14);
    }

    #[test]
    fn forward_rejects_non_finite_input() {
        let cfg = config(Architecture::Linear, Task::Regression);
        let params = linear_params(&[1.0], 0.0);
        let batch = Matrix::from_rows(&[vec![f64::NAN]]).unwrap();
        assert!(forward(&cfg, &params, &Batch::Rows(&batch), ForwardMode::Infer).is_err());
    }

    #[test]
    fn cross_entropy_at_half_is_ln_two() {
        let params = linear_params(&[1.0], 0.0);
        let reg = RegularizationConfig::default();
        let l = loss(&[0.5], &[1.0], LossKind::CrossEntropy, &reg, &params).unwrap();
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(!l.clamped);
    }

    #[test]
    fn mse_identity_is_zero() {
        let params = linear_params(&[1.0], 0.0);
        let reg = RegularizationConfig::default();
        let l = loss(&[1.0, 2.0], &[1.0, 2.0], LossKind::Mse, &reg, &params).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn penalty_mix_boundaries() {
        let params = linear_params(&[3.0, -4.0], 9.0);
        // Pure L2: lambda * 0.5 * (9 + 16); bias excluded.
        let l2 = RegularizationConfig {
            lambda: 2.0,
            mix: 0.0,
            early_stopping_patience: 0,
        };
        assert!((weight_penalty(&params, &l2) - 25.0).abs() < 1e-12);
        // Pure L1: lambda * (3 + 4).
        let l1 = RegularizationConfig {
            lambda: 2.0,
            mix: 1.0,
            early_stopping_patience: 0,
        };
        assert!((weight_penalty(&params, &l1) - 14.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_clamps_and_flags() {
        let params = linear_params(&[1.0], 0.0);
        let reg = RegularizationConfig::default();
        let l = loss(&[1.0], &[0.0], LossKind::CrossEntropy, &reg, &params).unwrap();
        assert!(l.clamped);
        assert!(l.value.is_finite());
    }

    #[test]
    fn cross_entropy_rejects_non_binary_targets() {
        let params = linear_params(&[1.0], 0.0);
        let reg = RegularizationConfig::default();
        assert!(loss(&[0.5], &[0.3], LossKind::CrossEntropy, &reg, &params).is_err());
    }

    #[test]
    fn linear_mse_gradient_closed_form() {
        // Single example: d/dw of (y - (w.x + b))^2 is 2(pred - y) x.
        let cfg = config(Architecture::Linear, Task::Regression);
        let params = linear_params(&[0.5, -1.0], 0.25);
        let x = vec![2.0, 3.0];
        let y = 1.5;
        let batch = Matrix::from_rows(&[x.clone()]).unwrap();
        let (preds, cache) =
            forward(&cfg, &params, &Batch::Rows(&batch), ForwardMode::Infer).unwrap();
        let d = loss_gradient(&preds, &[y], LossKind::Mse).unwrap();
        let reg = RegularizationConfig::default();
        let grads = backward(&cfg, &params, &cache, &d, &reg).unwrap();
        let Gradients::Dense(g) = grads else { unreachable!() };
        let expected = 2.0 * (preds[0] - y);
        assert!((g.layers[0].weights.get(0, 0) - expected * x[0]).abs() < 1e-12);
        assert!((g.layers[0].weights.get(0, 1) - expected * x[1]).abs() < 1e-12);
        assert!((g.layers[0].biases[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn l2_gradient_adds_lambda_w() {
        let cfg = config(Architecture::Linear, Task::Regression);
        let params = linear_params(&[0.5, -1.0], 0.25);
        let batch = Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        let (preds, cache) =
            forward(&cfg, &params, &Batch::Rows(&batch), ForwardMode::Infer).unwrap();
        let d = loss_gradient(&preds, &[1.5], LossKind::Mse).unwrap();
        let no_reg = RegularizationConfig::default();
        let with_l2 = RegularizationConfig {
            lambda: 0.7,
            mix: 0.0,
            early_stopping_patience: 0,
        };
        let plain = backward(&cfg, &params, &cache, &d, &no_reg).unwrap();
        let reg = backward(&cfg, &params, &cache, &d, &with_l2).unwrap();
        let (Gradients::Dense(a), Gradients::Dense(b)) = (plain, reg) else {
            unreachable!()
        };
        assert!(
            (b.layers[0].weights.get(0, 0) - (a.layers[0].weights.get(0, 0) + 0.7 * 0.5)).abs()
                < 1e-12
        );
        // Biases carry no penalty.
        assert_eq!(a.layers[0].biases[0], b.layers[0].biases[0]);
    }

    #[test]
    fn mc_dropout_without_dropout_is_deterministic() {
        let cfg = config(
            Architecture::Mlp {
                layer_sizes: vec![3],
                activation: Activation::Tanh,
            },
            Task::Regression,
        );
        let params = initialize_params(&cfg, 2).unwrap();
        let model = TrainedModel {
            config: cfg,
            loss_kind: LossKind::Mse,
            params,
            history: vec![],
            stopped_epoch: 0,
        };
        let input = [0.4, -0.2];
        let (mean, std) = model
            .mc_dropout_predict(&Sample::Row(&input), 50, 3)
            .unwrap();
        let infer = model
            .forward_sample(&Sample::Row(&input), ForwardMode::Infer)
            .unwrap();
        assert_eq!(std, 0.0);
        assert_eq!(mean, infer);
    }

    #[test]
    fn mc_dropout_single_sample_zero_stddev() {
        let mut cfg = config(
            Architecture::Mlp {
                layer_sizes: vec![4],
                activation: Activation::Relu,
            },
            Task::Regression,
        );
        cfg.dropout_p = 0.5;
        let params = initialize_params(&cfg, 2).unwrap();
        let model = TrainedModel {
            config: cfg,
            loss_kind: LossKind::Mse,
            params,
            history: vec![],
            stopped_epoch: 0,
        };
        let input = [1.0, 2.0];
        let (_, std) = model.mc_dropout_predict(&Sample::Row(&input), 1, 9).unwrap();
        assert_eq!(std, 0.0);
        assert!(model.mc_dropout_predict(&Sample::Row(&input), 0, 9).is_err());
    }

    #[test]
    fn mc_dropout_same_seed_same_result() {
        let mut cfg = config(
            Architecture::Mlp {
                layer_sizes: vec![4],
                activation: Activation::Tanh,
            },
            Task::Regression,
        );
        cfg.dropout_p = 0.3;
        let params = initialize_params(&cfg, 2).unwrap();
        let model = TrainedModel {
            config: cfg,
            loss_kind: LossKind::Mse,
            params,
            history: vec![],
            stopped_epoch: 0,
        };
        let input = [1.0, 2.0];
        let a = model.mc_dropout_predict(&Sample::Row(&input), 25, 4).unwrap();
        let b = model.mc_dropout_predict(&Sample::Row(&input), 25, 4).unwrap();
        assert_eq!(a, b);
    }

    fn dates(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
        (0..n).map(|i| start + chrono::Days::new(i as u64)).collect()
    }

    #[test]
    fn classification_indicator_is_affine_in_probability() {
        // A logistic model whose probabilities we can steer via the bias.
        let cfg = config(Architecture::Logistic, Task::Classification);
        let params = linear_params(&[1.0], 0.0);
        let model = TrainedModel {
            config: cfg,
            loss_kind: LossKind::CrossEntropy,
            params,
            history: vec![],
            stopped_epoch: 0,
        };
        // Monotonically increasing inputs give monotonically increasing
        // probabilities, so the indicator decreases.
        let features =
            Matrix::from_rows(&[vec![-30.0], vec![-1.0], vec![0.0], vec![1.0], vec![30.0]])
                .unwrap();
        let series = indicator_from_model(&model, &features, &dates(5)).unwrap();
        let v = series.values();
        for pair in v.windows(2) {
            assert!(pair[1] < pair[0]);
        }
        // Saturated probabilities hit the affine endpoints.
        assert!((v[0] - 1.0).abs() < 1e-9);
        assert!((v[4] - (-1.0)).abs() < 1e-9);
        let p_half = 1.0 - 2.0 * 0.5;
        assert!((v[2] - p_half).abs() < 1e-12);
    }

    #[test]
    fn regression_indicator_standardizes_to_tanh() {
        let cfg = config(Architecture::Linear, Task::Regression);
        let params = linear_params(&[1.0], 0.0);
        let model = TrainedModel {
            config: cfg,
            loss_kind: LossKind::Mse,
            params,
            history: vec![],
            stopped_epoch: 0,
        };
        let features = Matrix::from_rows(&[vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        let series = indicator_from_model(&model, &features, &dates(3)).unwrap();
        // Mean prediction is 0: the middle value standardizes to tanh(0).
        assert_eq!(series.values()[1], 0.0);
        assert!(series.values().iter().all(|v| (-1.0..=1.0).contains(v)));

        // Constant predictions have zero spread and map to zero.
        let flat = Matrix::from_rows(&[vec![2.0], vec![2.0], vec![2.0]]).unwrap();
        let series = indicator_from_model(&model, &flat, &dates(3)).unwrap();
        assert_eq!(series.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn smoothing_span_one_is_identity() {
        let series =
            RiskIndicatorSeries::new(dates(3), vec![0.5, -0.25, 0.75]).unwrap();
        let smoothed = smooth_indicator(&series, 1).unwrap();
        assert_eq!(series.values(), smoothed.values());
    }

    #[test]
    fn smoothing_constant_is_fixed_point() {
        let series = RiskIndicatorSeries::new(dates(4), vec![0.3; 4]).unwrap();
        let smoothed = smooth_indicator(&series, 5).unwrap();
        for &v in smoothed.values() {
            assert!((v - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn smoothing_step_follows_recurrence() {
        // Step 0 -> 1 with span 3 (alpha = 0.5): 0, 0.5, 0.75, 0.875.
        let series =
            RiskIndicatorSeries::new(dates(4), vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        let smoothed = smooth_indicator(&series, 3).unwrap();
        let expected = [0.0, 0.5, 0.75, 0.875];
        for (v, e) in smoothed.values().iter().zip(expected) {
            assert!((v - e).abs() < 1e-15);
        }
        assert!(smooth_indicator(&series, 0).is_err());
    }

    #[test]
    fn config_validation_rejects_mismatches() {
        assert!(config(Architecture::Linear, Task::Classification)
            .validate()
            .is_err());
        assert!(config(Architecture::Logistic, Task::Regression)
            .validate()
            .is_err());
        let mut bad = config(
            Architecture::Mlp {
                layer_sizes: vec![],
                activation: Activation::Relu,
            },
            Task::Regression,
        );
        assert!(bad.validate().is_err());
        bad.architecture = Architecture::Gru { hidden_size: 0 };
        assert!(bad.validate().is_err());
    }
}
