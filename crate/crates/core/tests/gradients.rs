//! Finite-difference verification of every backward pass.
//!
//! For each architecture and loss, the analytic gradients from `backward`
//! must match central finite differences of the full regularized batch
//! loss. The flatten/perturb machinery lives here, independent of the
//! implementation it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskcast::matrix::Matrix;
use riskcast::models::{
    backward, forward, initialize_params, loss, loss_gradient, Activation, Architecture, Batch,
    ForwardMode, Gradients, LossKind, ModelConfig, ModelParams, RegularizationConfig, Task,
};

const FD_STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-5;

fn flatten_params(params: &ModelParams) -> Vec<f64> {
    let mut out = Vec::new();
    match params {
        ModelParams::Dense(p) => {
            for layer in &p.layers {
                out.extend_from_slice(layer.weights.data());
                out.extend_from_slice(&layer.biases);
                if let Some(bn) = &layer.batch_norm {
                    out.extend_from_slice(&bn.gamma);
                    out.extend_from_slice(&bn.beta);
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
            ] {
                out.extend_from_slice(m.data());
            }
            out.extend_from_slice(&p.b_update);
            out.extend_from_slice(&p.b_reset);
            out.extend_from_slice(&p.b_candidate);
            out.extend_from_slice(p.readout_weights.data());
            out.push(p.readout_bias);
        }
    }
    out
}

fn write_params(params: &mut ModelParams, values: &[f64]) {
    let mut cursor = 0usize;
    let take = |slot: &mut [f64], cursor: &mut usize| {
        slot.copy_from_slice(&values[*cursor..*cursor + slot.len()]);
        *cursor += slot.len();
    };
    match params {
        ModelParams::Dense(p) => {
            for layer in &mut p.layers {
                take(layer.weights.data_mut(), &mut cursor);
                take(&mut layer.biases, &mut cursor);
                if let Some(bn) = &mut layer.batch_norm {
                    take(&mut bn.gamma, &mut cursor);
                    take(&mut bn.beta, &mut cursor);
                }
            }
        }
        ModelParams::Gru(p) => {
            for m in [
                &mut p.w_update,
                &mut p.w_reset,
                &mut p.w_candidate,
                &mut p.u_update,
                &mut p.u_reset,
                &mut p.u_candidate,
            ] {
                take(m.data_mut(), &mut cursor);
            }
            take(&mut p.b_update, &mut cursor);
            take(&mut p.b_reset, &mut cursor);
            take(&mut p.b_candidate, &mut cursor);
            take(p.readout_weights.data_mut(), &mut cursor);
            p.readout_bias = values[cursor];
            cursor += 1;
        }
    }
    assert_eq!(cursor, values.len());
}

fn flatten_grads(grads: &Gradients) -> Vec<f64> {
    let mut out = Vec::new();
    match grads {
        Gradients::Dense(g) => {
            for layer in &g.layers {
                out.extend_from_slice(layer.weights.data());
                out.extend_from_slice(&layer.biases);
                if let Some(v) = &layer.gamma {
                    out.extend_from_slice(v);
                }
                if let Some(v) = &layer.beta {
                    out.extend_from_slice(v);
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
            ] {
                out.extend_from_slice(m.data());
            }
            out.extend_from_slice(&g.b_update);
            out.extend_from_slice(&g.b_reset);
            out.extend_from_slice(&g.b_candidate);
            out.extend_from_slice(g.readout_weights.data());
            out.push(g.readout_bias);
        }
    }
    out
}

struct Instance {
    label: String,
    config: ModelConfig,
    loss_kind: LossKind,
    reg: RegularizationConfig,
    rows: Option<Matrix>,
    sequences: Option<Vec<Matrix>>,
    targets: Vec<f64>,
    mode: ForwardMode,
}

impl Instance {
    fn batch(&self) -> Batch<'_> {
        match (&self.rows, &self.sequences) {
            (Some(rows), None) => Batch::Rows(rows),
            (None, Some(seqs)) => Batch::Sequences(seqs.iter().collect()),
            _ => unreachable!(),
        }
    }

    fn batch_loss(&self, params: &ModelParams) -> f64 {
        let (preds, _) = forward(&self.config, params, &self.batch(), self.mode).unwrap();
        loss(&preds, &self.targets, self.loss_kind, &self.reg, params)
            .unwrap()
            .value
    }

    /// Max relative error between analytic and finite-difference gradients.
    fn max_gradient_error(&self) -> f64 {
        let params = initialize_params(&self.config, self.input_width()).unwrap();
        let (preds, cache) = forward(&self.config, &params, &self.batch(), self.mode).unwrap();
        let d_preds = loss_gradient(&preds, &self.targets, self.loss_kind).unwrap();
        let analytic = flatten_grads(
            &backward(&self.config, &params, &cache, &d_preds, &self.reg).unwrap(),
        );

        let flat = flatten_params(&params);
        assert!(
            flat.len() >= 5,
            "{}: instance too small ({} params)",
            self.label,
            flat.len()
        );
        assert!(flat.len() <= 200, "{}: instance too large", self.label);
        assert_eq!(flat.len(), analytic.len(), "{}", self.label);

        let mut worst = 0.0f64;
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += FD_STEP;
            let mut minus = flat.clone();
            minus[i] -= FD_STEP;
            let mut p_plus = params.clone();
            write_params(&mut p_plus, &plus);
            let mut p_minus = params.clone();
            write_params(&mut p_minus, &minus);
            let numeric = (self.batch_loss(&p_plus) - self.batch_loss(&p_minus)) / (2.0 * FD_STEP);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-4);
            let err = (analytic[i] - numeric).abs() / denom;
            worst = worst.max(err);
        }
        worst
    }

    fn input_width(&self) -> usize {
        match (&self.rows, &self.sequences) {
            (Some(rows), None) => rows.cols(),
            (None, Some(seqs)) => seqs[0].cols(),
            _ => unreachable!(),
        }
    }
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, width: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..width).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

fn binary_targets(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| f64::from(rng.gen_range(0..2))).collect()
}

fn real_targets(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn no_reg() -> RegularizationConfig {
    RegularizationConfig {
        lambda: 0.0,
        mix: 0.0,
        early_stopping_patience: 0,
    }
}

fn elastic(lambda: f64, mix: f64) -> RegularizationConfig {
    RegularizationConfig {
        lambda,
        mix,
        early_stopping_patience: 0,
    }
}

fn build_instances() -> Vec<Instance> {
    let mut instances = Vec::new();

    // Linear regression, three seeds, one with elastic net.
    for (i, seed) in [11u64, 12, 13].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        let rows = random_rows(&mut rng, 4, 4);
        let targets = real_targets(&mut rng, 4);
        instances.push(Instance {
            label: format!("linear-{seed}"),
            config: ModelConfig {
                architecture: Architecture::Linear,
                task: Task::Regression,
                dropout_p: 0.0,
                batch_norm: false,
                seed: *seed,
            },
            loss_kind: LossKind::Mse,
            reg: if i == 2 { elastic(0.3, 0.5) } else { no_reg() },
            rows: Some(rows),
            sequences: None,
            targets,
            mode: ForwardMode::Infer,
        });
    }

    // Logistic classification, three seeds, one with pure L2.
    for (i, seed) in [21u64, 22, 23].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        let rows = random_rows(&mut rng, 5, 4);
        let targets = binary_targets(&mut rng, 5);
        instances.push(Instance {
            label: format!("logistic-{seed}"),
            config: ModelConfig {
                architecture: Architecture::Logistic,
                task: Task::Classification,
                dropout_p: 0.0,
                batch_norm: false,
                seed: *seed,
            },
            loss_kind: LossKind::CrossEntropy,
            reg: if i == 1 { elastic(0.2, 0.0) } else { no_reg() },
            rows: Some(rows),
            sequences: None,
            targets,
            mode: ForwardMode::Infer,
        });
    }

    // MLPs across all activations and both losses.
    let mlp_cases: [(u64, Activation, LossKind, Task); 6] = [
        (31, Activation::Sigmoid, LossKind::CrossEntropy, Task::Classification),
        (32, Activation::Sigmoid, LossKind::Mse, Task::Regression),
        (33, Activation::Tanh, LossKind::CrossEntropy, Task::Classification),
        (34, Activation::Tanh, LossKind::Mse, Task::Regression),
        (35, Activation::Relu, LossKind::CrossEntropy, Task::Classification),
        (36, Activation::Relu, LossKind::Mse, Task::Regression),
    ];
    for (seed, activation, loss_kind, task) in mlp_cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng, 6, 3);
        let targets = match loss_kind {
            LossKind::CrossEntropy => binary_targets(&mut rng, 6),
            LossKind::Mse => real_targets(&mut rng, 6),
        };
        instances.push(Instance {
            label: format!("mlp-{activation:?}-{loss_kind:?}"),
            config: ModelConfig {
                architecture: Architecture::Mlp {
                    layer_sizes: vec![5, 3],
                    activation,
                },
                task,
                dropout_p: 0.0,
                batch_norm: false,
                seed,
            },
            loss_kind,
            reg: elastic(0.1, 0.3),
            rows: Some(rows),
            sequences: None,
            targets,
            mode: ForwardMode::Infer,
        });
    }

    // Dropout active in train mode: the fixed (seed, step) pins the mask,
    // so the loss stays a deterministic function of the parameters.
    for seed in [41u64, 42] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng, 5, 3);
        let targets = real_targets(&mut rng, 5);
        instances.push(Instance {
            label: format!("mlp-dropout-{seed}"),
            config: ModelConfig {
                architecture: Architecture::Mlp {
                    layer_sizes: vec![6],
                    activation: Activation::Tanh,
                },
                task: Task::Regression,
                dropout_p: 0.4,
                batch_norm: false,
                seed,
            },
            loss_kind: LossKind::Mse,
            reg: no_reg(),
            rows: Some(rows),
            sequences: None,
            targets,
            mode: ForwardMode::Train { seed, step: 0 },
        });
    }

    // Batch normalization in train mode: batch statistics re-derive under
    // every perturbation, so the finite difference sees the full coupling.
    for seed in [51u64, 52] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_rows(&mut rng, 6, 3);
        let targets = real_targets(&mut rng, 6);
        instances.push(Instance {
            label: format!("mlp-batchnorm-{seed}"),
            config: ModelConfig {
                architecture: Architecture::Mlp {
                    layer_sizes: vec![4],
                    activation: Activation::Tanh,
                },
                task: Task::Regression,
                dropout_p: 0.0,
                batch_norm: true,
                seed,
            },
            loss_kind: LossKind::Mse,
            reg: no_reg(),
            rows: Some(rows),
            sequences: None,
            targets,
            mode: ForwardMode::Train { seed, step: 3 },
        });
    }

    // GRU over short windows, both losses.
    let gru_cases: [(u64, LossKind, Task); 4] = [
        (61, LossKind::Mse, Task::Regression),
        (62, LossKind::Mse, Task::Regression),
        (63, LossKind::CrossEntropy, Task::Classification),
        (64, LossKind::CrossEntropy, Task::Classification),
    ];
    for (seed, loss_kind, task) in gru_cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sequences: Vec<Matrix> = (0..3).map(|_| random_rows(&mut rng, 4, 2)).collect();
        let targets = match loss_kind {
            LossKind::CrossEntropy => binary_targets(&mut rng, 3),
            LossKind::Mse => real_targets(&mut rng, 3),
        };
        instances.push(Instance {
            label: format!("gru-{loss_kind:?}-{seed}"),
            config: ModelConfig {
                architecture: Architecture::Gru { hidden_size: 3 },
                task,
                dropout_p: 0.0,
                batch_norm: false,
                seed,
            },
            loss_kind,
            reg: elastic(0.05, 0.4),
            rows: None,
            sequences: Some(sequences),
            targets,
            mode: ForwardMode::Infer,
        });
    }

    instances
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let instances = build_instances();
    assert!(instances.len() >= 20, "need at least 20 instances");
    for instance in instances {
        let err = instance.max_gradient_error();
        assert!(
            err < TOLERANCE,
            "{}: max relative gradient error {err:.3e} exceeds {TOLERANCE:.0e}",
            instance.label
        );
    }
}

#[test]
fn relu_kink_is_the_only_gradient_caveat() {
    // A pre-activation pinned at the kink: the one-sided derivative makes
    // finite differences disagree there. This documents why relu checks
    // sample away from 0; the surrounding instances above stay clear.
    let x = 0.0f64;
    let relu = |v: f64| v.max(0.0);
    let fd = (relu(x + FD_STEP) - relu(x - FD_STEP)) / (2.0 * FD_STEP);
    assert!((fd - 0.5).abs() < 1e-12);
}
