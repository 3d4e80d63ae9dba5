//! Double-precision gradient checks over every layer operation and a reduced network.

use std::fmt;
use std::time::Instant;

use rand::Rng;

use crate::error::Result;
use crate::model::{LayerSpec, Model, ModelSpec};
use crate::nn::{self, grad_check, BnConfig, Mode, RunningStats};
use crate::rng::rng_from;
use crate::tensor::Tensor;

pub const OP_THRESHOLD: f64 = 1e-4;
pub const BATCHNORM_THRESHOLD: f64 = 1e-3;
pub const MODEL_THRESHOLD: f64 = 1e-3;
const EPS: f64 = 1e-6;

type CheckFn = Box<dyn Fn() -> Result<f64> + Send + Sync>;

/// One named check: returns the maximum relative error it measured.
pub struct CheckCase {
    pub name: String,
    pub threshold: f64,
    run: CheckFn,
}

impl CheckCase {
    pub fn new(name: impl Into<String>, threshold: f64, run: impl Fn() -> Result<f64> + Send + Sync + 'static) -> Self {
        CheckCase {
            name: name.into(),
            threshold,
            run: Box::new(run),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub threshold: f64,
    /// `Err` carries the failure message of a check that could not run.
    pub max_rel_error: std::result::Result<f64, String>,
    pub seconds: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        matches!(self.max_rel_error, Ok(e) if e < self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(CheckOutcome::passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.outcomes {
            let status = if o.passed() { "ok  " } else { "FAIL" };
            match &o.max_rel_error {
                Ok(e) => writeln!(
                    f,
                    "{status} {:<24} max rel error {e:.3e} (< {:.0e})",
                    o.name, o.threshold
                )?,
                Err(msg) => writeln!(f, "{status} {:<24} error: {msg}", o.name)?,
            }
        }
        Ok(())
    }
}

pub fn run_suite(cases: &[CheckCase]) -> SuiteReport {
    let outcomes = cases
        .iter()
        .map(|c| {
            let started = Instant::now();
            let r = (c.run)().map_err(|e| e.to_string());
            CheckOutcome {
                name: c.name.clone(),
                threshold: c.threshold,
                max_rel_error: r,
                seconds: started.elapsed().as_secs_f64(),
            }
        })
        .collect();
    SuiteReport { outcomes }
}

fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rng_from(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero, so no finite-difference step crosses a kink.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(shape, seed).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

/// Distinct values with gaps far wider than the difference step, so pooling windows have no near-ties.
fn distinct(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng_from(seed));
    Tensor::new(shape.to_vec(), order.iter().map(|&k| k as f64 * 0.01 - 0.5).collect()).expect("shape")
}

/// Small network exercising conv, batch norm, leaky ReLU, pooling, dense, and dropout.
pub fn reduced_spec() -> ModelSpec {
    ModelSpec {
        input_shape: [1, 9, 9],
        num_classes: 3,
        layers: vec![
            LayerSpec::conv(2),
            LayerSpec::pool(),
            LayerSpec::conv(3),
            LayerSpec::MaxPool { dropout: Some(0.25) },
            LayerSpec::dense(4, Some(0.5)),
            LayerSpec::Softmax { classes: 3 },
        ],
        ..ModelSpec::annex(3)
    }
}

pub fn default_cases() -> Vec<CheckCase> {
    vec![
        CheckCase::new("conv2d", OP_THRESHOLD, || {
            let inputs = [uniform(&[2, 3, 5, 5], 1), uniform(&[4, 3, 3, 3], 2), uniform(&[4], 3)];
            grad_check(
                |xs| Ok(nn::conv2d_forward(&xs[0], &xs[1], &xs[2])?.0),
                |xs, gy| {
                    let (_, cache) = nn::conv2d_forward(&xs[0], &xs[1], &xs[2])?;
                    let g = nn::conv2d_backward(gy, &cache)?;
                    Ok(vec![g.input, g.weight, g.bias])
                },
                &inputs,
                EPS,
                10,
            )
        }),
        CheckCase::new("maxpool", OP_THRESHOLD, || {
            grad_check(
                |xs| Ok(nn::maxpool_forward(&xs[0])?.0),
                |xs, gy| {
                    let (_, cache) = nn::maxpool_forward(&xs[0])?;
                    Ok(vec![nn::maxpool_backward(gy, &cache)?])
                },
                &[distinct(&[2, 2, 7, 7], 4)],
                EPS,
                11,
            )
        }),
        CheckCase::new("leaky_relu", OP_THRESHOLD, || {
            let alpha = nn::DEFAULT_LEAKY_SLOPE;
            grad_check(
                move |xs| Ok(nn::leaky_relu_forward(&xs[0], alpha)?.0),
                move |xs, gy| {
                    let (_, cache) = nn::leaky_relu_forward(&xs[0], alpha)?;
                    Ok(vec![nn::leaky_relu_backward(gy, &cache)?])
                },
                &[away_from_zero(&[3, 4, 5], 5)],
                EPS,
                12,
            )
        }),
        CheckCase::new("dropout", OP_THRESHOLD, || {
            grad_check(
                |xs| Ok(nn::dropout_forward(&xs[0], 0.5, Mode::Train, 99)?.0),
                |xs, gy| {
                    let (_, cache) = nn::dropout_forward(&xs[0], 0.5, Mode::Train, 99)?;
                    Ok(vec![nn::dropout_backward(gy, &cache)?])
                },
                &[uniform(&[4, 6], 6)],
                EPS,
                13,
            )
        }),
        CheckCase::new("dense", OP_THRESHOLD, || {
            let inputs = [uniform(&[3, 5], 7), uniform(&[5, 4], 8), uniform(&[4], 9)];
            grad_check(
                |xs| Ok(nn::dense_forward(&xs[0], &xs[1], &xs[2])?.0),
                |xs, gy| {
                    let (_, cache) = nn::dense_forward(&xs[0], &xs[1], &xs[2])?;
                    let g = nn::dense_backward(gy, &cache)?;
                    Ok(vec![g.input, g.weight, g.bias])
                },
                &inputs,
                EPS,
                14,
            )
        }),
        batchnorm_case("batchnorm (spatial)", &[4, 3, 2, 2], 15),
        batchnorm_case("batchnorm (flat)", &[6, 4], 16),
        CheckCase::new("softmax_cross_entropy", OP_THRESHOLD, || {
            let labels = [0usize, 4, 2];
            grad_check(
                |xs| {
                    let (loss, _) = nn::softmax_cross_entropy(&xs[0], &labels)?;
                    Tensor::new([1], vec![loss])
                },
                |xs, gy| {
                    let (_, g) = nn::softmax_cross_entropy(&xs[0], &labels)?;
                    Ok(vec![g.map(|v| v * gy.data()[0])])
                },
                &[uniform(&[3, 5], 17).map(|v| 3.0 * v)],
                EPS,
                18,
            )
        }),
        CheckCase::new("reduced model", MODEL_THRESHOLD, || {
            model_grad_check(&reduced_spec(), 4, 21)
        }),
    ]
}

fn batchnorm_case(name: &str, shape: &[usize], seed: u64) -> CheckCase {
    let shape = shape.to_vec();
    CheckCase::new(name, BATCHNORM_THRESHOLD, move || {
        let c = shape[1];
        let inputs = [
            uniform(&shape, seed),
            uniform(&[c], seed + 100).map(|v| v + 1.5),
            uniform(&[c], seed + 200),
        ];
        let fwd = |xs: &[Tensor<f64>]| {
            let mut running = RunningStats::new(c);
            nn::batchnorm_train(&xs[0], &xs[1], &xs[2], &mut running, BnConfig::default())
        };
        grad_check(
            |xs| Ok(fwd(xs)?.0),
            |xs, gy| {
                let (_, cache) = fwd(xs)?;
                let g = nn::batchnorm_backward(gy, &cache)?;
                Ok(vec![g.input, g.gamma, g.beta])
            },
            &inputs,
            EPS,
            seed + 300,
        )
    })
}

/// Cross-entropy of a `spec` network on a random batch of `n`, differentiated
/// w.r.t. the input and every parameter.
pub fn model_grad_check(spec: &ModelSpec, n: usize, seed: u64) -> Result<f64> {
    let base: Model<f64> = Model::build(spec.clone(), seed)?;
    let names: Vec<String> = base.params().keys().cloned().collect();
    let labels: Vec<usize> = (0..n).map(|i| i % spec.num_classes).collect();
    let [c, h, w] = spec.input_shape;
    let x = uniform(&[n, c, h, w], seed + 1);
    let dropout_seed = seed + 2;
    let mut inputs = vec![x];
    inputs.extend(names.iter().map(|n| base.params()[n].clone()));

    let with_params = |xs: &[Tensor<f64>]| {
        let mut m = base.clone();
        for (name, t) in names.iter().zip(&xs[1..]) {
            m.params_mut().insert(name.clone(), t.clone());
        }
        m
    };
    grad_check(
        |xs| {
            let (logits, _) = with_params(xs).forward_train(&xs[0], dropout_seed)?;
            let (loss, _) = nn::softmax_cross_entropy(&logits, &labels)?;
            Tensor::new([1], vec![loss])
        },
        |xs, gy| {
            let mut m = with_params(xs);
            let (logits, caches) = m.forward_train(&xs[0], dropout_seed)?;
            let (_, g) = nn::softmax_cross_entropy(&logits, &labels)?;
            let g = g.map(|v| v * gy.data()[0]);
            let (grads, gx) = m.backward_with_input(&g, caches)?;
            let mut out = vec![gx];
            out.extend(names.iter().map(|n| grads[n].clone()));
            Ok(out)
        },
        &inputs,
        EPS,
        seed + 3,
    )
}
