use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::spec::{LayerSpec, ModelSpec, ShapeTrace};
use crate::nn::{self, Mode, RunningStats};
use crate::rng::{derive_seed, rng_from};
use crate::tensor::{Scalar, Tensor};

/// Standard deviation of the zero-mean normal used for the classifier head.
pub const HEAD_INIT_STD: f64 = 0.01;

pub type ParamMap<T> = BTreeMap<String, Tensor<T>>;

fn site(row: usize) -> String {
    format!("layer{:02}", row + 1)
}

pub fn weight_key(row: usize) -> String {
    format!("{}.weight", site(row))
}
pub fn bias_key(row: usize) -> String {
    format!("{}.bias", site(row))
}
pub fn gamma_key(row: usize) -> String {
    format!("{}.bn.gamma", site(row))
}
pub fn beta_key(row: usize) -> String {
    format!("{}.bn.beta", site(row))
}
pub fn bn_site(row: usize) -> String {
    format!("{}.bn", site(row))
}

/// Parameter shapes implied by a spec, keyed like [`Model::params`].
pub fn param_shapes(spec: &ModelSpec, trace: &ShapeTrace) -> BTreeMap<String, Vec<usize>> {
    let mut shapes = BTreeMap::new();
    let mut prev = trace.input;
    for (row, (layer, out)) in spec.layers.iter().zip(&trace.outputs).enumerate() {
        match layer {
            LayerSpec::Conv { filters, .. } => {
                let cin = match prev {
                    crate::model::ActShape::Spatial { channels, .. } => channels,
                    crate::model::ActShape::Flat(_) => unreachable!("validated spec"),
                };
                shapes.insert(weight_key(row), vec![*filters, cin, 3, 3]);
                shapes.insert(bias_key(row), vec![*filters]);
            }
            LayerSpec::Dense { units, .. } => {
                shapes.insert(weight_key(row), vec![prev.elements(), *units]);
                shapes.insert(bias_key(row), vec![*units]);
            }
            LayerSpec::Softmax { classes } => {
                shapes.insert(weight_key(row), vec![prev.elements(), *classes]);
                shapes.insert(bias_key(row), vec![*classes]);
            }
            LayerSpec::MaxPool { .. } => {}
        }
        if layer.has_batch_norm() {
            let c = match layer {
                LayerSpec::Conv { filters, .. } => *filters,
                LayerSpec::Dense { units, .. } => *units,
                _ => unreachable!(),
            };
            shapes.insert(gamma_key(row), vec![c]);
            shapes.insert(beta_key(row), vec![c]);
        }
        prev = *out;
    }
    shapes
}

/// A built network: spec, trainable parameters, and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    spec: ModelSpec,
    trace: ShapeTrace,
    params: ParamMap<T>,
    running: BTreeMap<String, RunningStats<T>>,
    rng_seed: u64,
    generation: u64,
}

enum Step<T> {
    Conv(usize, nn::Conv2dCache<T>),
    Dense(usize, nn::DenseCache<T>),
    Bn(usize, nn::BatchNormCache<T>),
    Act(nn::LeakyReluCache),
    Pool(nn::MaxPoolCache),
    Dropout(nn::DropoutCache),
    Flatten(Vec<usize>),
}

/// Layer records from one train-mode forward pass; consumed by [`Model::backward`].
pub struct ForwardCaches<T> {
    steps: Vec<Step<T>>,
    generation: u64,
    mode: Mode,
}

impl<T> ForwardCaches<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

impl<T: Scalar> Model<T> {
    /// He-initialized (fan-in, leaky-corrected) weights, zero biases, unit BN scale.
    pub fn build(spec: ModelSpec, init_seed: u64) -> Result<Self> {
        let trace = spec.validate()?;
        let shapes = param_shapes(&spec, &trace);
        let alpha = spec.leaky_slope;
        let mut params = BTreeMap::new();
        let mut running = BTreeMap::new();
        for (row, layer) in spec.layers.iter().enumerate() {
            if let Some(shape) = shapes.get(&weight_key(row)) {
                let fan_in: usize = match layer {
                    LayerSpec::Conv { .. } => shape[1..].iter().product(),
                    _ => shape[0],
                };
                let std = match layer {
                    LayerSpec::Softmax { .. } => HEAD_INIT_STD,
                    _ => (2.0 / ((1.0 + alpha * alpha) * fan_in as f64)).sqrt(),
                };
                let normal = Normal::new(0.0, std).expect("finite positive std");
                let mut rng = rng_from(derive_seed(init_seed, &[row as u64]));
                let w = Tensor::from_fn(shape.clone(), |_| T::of(normal.sample(&mut rng)));
                params.insert(weight_key(row), w);
                params.insert(bias_key(row), Tensor::zeros(shapes[&bias_key(row)].clone()));
            }
            if layer.has_batch_norm() {
                let c = shapes[&gamma_key(row)][0];
                params.insert(gamma_key(row), Tensor::full([c], T::one()));
                params.insert(beta_key(row), Tensor::zeros([c]));
                running.insert(bn_site(row), RunningStats::new(c));
            }
        }
        Ok(Model {
            spec,
            trace,
            params,
            running,
            rng_seed: init_seed,
            generation: 0,
        })
    }

    pub(crate) fn from_parts(
        spec: ModelSpec,
        params: ParamMap<T>,
        running: BTreeMap<String, RunningStats<T>>,
        rng_seed: u64,
    ) -> Result<Self> {
        let trace = spec.validate()?;
        Ok(Model {
            spec,
            trace,
            params,
            running,
            rng_seed,
            generation: 0,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn shape_trace(&self) -> &ShapeTrace {
        &self.trace
    }

    pub fn params(&self) -> &ParamMap<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamMap<T> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &BTreeMap<String, RunningStats<T>> {
        &self.running
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Total element count of weights, biases, and BN scale/shift.
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let [c, h, w] = self.spec.input_shape;
        match batch.shape() {
            &[n, bc, bh, bw] if n > 0 && [bc, bh, bw] == [c, h, w] => Ok(()),
            other => Err(Error::shape(
                "model forward",
                "input batch",
                format!("expected [N,{c},{h},{w}], got {other:?}"),
            )),
        }
    }

    /// Train-mode pass: batch statistics, running-stat updates, dropout keyed by `seed`.
    pub fn forward_train(&mut self, batch: &Tensor<T>, seed: u64) -> Result<(Tensor<T>, ForwardCaches<T>)> {
        self.check_batch(batch)?;
        let (logits, steps) = self.run(batch, Mode::Train, seed, true)?;
        self.generation += 1;
        Ok((
            logits,
            ForwardCaches {
                steps,
                generation: self.generation,
                mode: Mode::Train,
            },
        ))
    }

    /// Inference pass: running statistics, no dropout, no state change.
    pub fn forward_infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        let (logits, _) = self.run_infer(batch)?;
        Ok(logits)
    }

    pub fn forward(&mut self, batch: &Tensor<T>, mode: Mode, seed: u64) -> Result<(Tensor<T>, ForwardCaches<T>)> {
        match mode {
            Mode::Train => self.forward_train(batch, seed),
            Mode::Infer => Ok((
                self.forward_infer(batch)?,
                ForwardCaches {
                    steps: Vec::new(),
                    generation: self.generation,
                    mode: Mode::Infer,
                },
            )),
        }
    }

    /// Class index with the highest logit for every batch row (lowest index on ties).
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.forward_infer(batch)?;
        Ok(argmax_rows(&logits))
    }

    fn run_infer(&self, batch: &Tensor<T>) -> Result<(Tensor<T>, Vec<Step<T>>)> {
        let mut scratch = None;
        self.walk(batch, Mode::Infer, 0, false, &mut scratch)
    }

    fn run(&mut self, batch: &Tensor<T>, mode: Mode, seed: u64, record: bool) -> Result<(Tensor<T>, Vec<Step<T>>)> {
        let mut updated = Some(self.running.clone());
        let out = self.walk(batch, mode, seed, record, &mut updated)?;
        if mode == Mode::Train {
            self.running = updated.expect("train mode keeps running stats");
        }
        Ok(out)
    }

    /// Shared forward walk. In train mode `running` receives the updated statistics.
    fn walk(
        &self,
        batch: &Tensor<T>,
        mode: Mode,
        seed: u64,
        record: bool,
        running: &mut Option<BTreeMap<String, RunningStats<T>>>,
    ) -> Result<(Tensor<T>, Vec<Step<T>>)> {
        let mut steps = Vec::new();
        let mut push = |s: Step<T>| {
            if record {
                steps.push(s);
            }
        };
        let alpha = self.spec.leaky_slope;
        let bn_cfg = self.spec.bn_config();
        let mut x = batch.clone();
        for (row, layer) in self.spec.layers.iter().enumerate() {
            let flatten = |x: Tensor<T>, push: &mut dyn FnMut(Step<T>)| -> Result<Tensor<T>> {
                if x.ndim() == 2 {
                    return Ok(x);
                }
                let shape = x.shape().to_vec();
                let n = shape[0];
                let d = x.len() / n;
                push(Step::Flatten(shape));
                x.reshape([n, d])
            };
            match layer {
                LayerSpec::Conv { .. } => {
                    let (y, cache) =
                        nn::conv2d_forward(&x, &self.params[&weight_key(row)], &self.params[&bias_key(row)])?;
                    push(Step::Conv(row, cache));
                    x = y;
                }
                LayerSpec::Dense { .. } | LayerSpec::Softmax { .. } => {
                    x = flatten(x, &mut push)?;
                    let (y, cache) =
                        nn::dense_forward(&x, &self.params[&weight_key(row)], &self.params[&bias_key(row)])?;
                    push(Step::Dense(row, cache));
                    x = y;
                }
                LayerSpec::MaxPool { .. } => {
                    let (y, cache) = nn::maxpool_forward(&x)?;
                    push(Step::Pool(cache));
                    x = y;
                }
            }
            if layer.has_batch_norm() {
                let gamma = &self.params[&gamma_key(row)];
                let beta = &self.params[&beta_key(row)];
                let key = bn_site(row);
                let (y, cache) = match (mode, running.as_mut()) {
                    (Mode::Train, Some(stats)) => {
                        let st = stats.get_mut(&key).expect("running stats exist for every BN site");
                        nn::batchnorm_train(&x, gamma, beta, st, bn_cfg)?
                    }
                    _ => nn::batchnorm_infer(&x, gamma, beta, &self.running[&key], bn_cfg, &key)?,
                };
                push(Step::Bn(row, cache));
                x = y;
            }
            if matches!(layer, LayerSpec::Conv { .. } | LayerSpec::Dense { .. }) {
                let (y, cache) = nn::leaky_relu_forward(&x, alpha)?;
                push(Step::Act(cache));
                x = y;
            }
            if let Some(p) = layer.dropout() {
                let (y, cache) = nn::dropout_forward(&x, p, mode, derive_seed(seed, &[row as u64]))?;
                push(Step::Dropout(cache));
                x = y;
            }
        }
        Ok((x, steps))
    }

    /// Gradients of every parameter, given `d loss / d logits`.
    pub fn backward(&self, grad_logits: &Tensor<T>, caches: ForwardCaches<T>) -> Result<ParamMap<T>> {
        let (grads, _) = self.backward_with_input(grad_logits, caches)?;
        debug_assert!(grads.keys().eq(self.params.keys()));
        Ok(grads)
    }

    /// Parameter gradients plus the gradient with respect to the input batch.
    pub fn backward_with_input(
        &self,
        grad_logits: &Tensor<T>,
        caches: ForwardCaches<T>,
    ) -> Result<(ParamMap<T>, Tensor<T>)> {
        if caches.mode != Mode::Train {
            return Err(Error::StaleCache("caches from an infer-mode forward pass".into()));
        }
        if caches.generation != self.generation {
            return Err(Error::StaleCache(format!(
                "caches from forward pass {} but the model is at pass {}",
                caches.generation, self.generation
            )));
        }
        let mut grads: ParamMap<T> = BTreeMap::new();
        let mut g = grad_logits.clone();
        for step in caches.steps.into_iter().rev() {
            g = match step {
                Step::Conv(row, cache) => {
                    let gr = nn::conv2d_backward(&g, &cache)?;
                    grads.insert(weight_key(row), gr.weight);
                    grads.insert(bias_key(row), gr.bias);
                    gr.input
                }
                Step::Dense(row, cache) => {
                    let gr = nn::dense_backward(&g, &cache)?;
                    grads.insert(weight_key(row), gr.weight);
                    grads.insert(bias_key(row), gr.bias);
                    gr.input
                }
                Step::Bn(row, cache) => {
                    let gr = nn::batchnorm_backward(&g, &cache)?;
                    grads.insert(gamma_key(row), gr.gamma);
                    grads.insert(beta_key(row), gr.beta);
                    gr.input
                }
                Step::Act(cache) => nn::leaky_relu_backward(&g, &cache)?,
                Step::Pool(cache) => nn::maxpool_backward(&g, &cache)?,
                Step::Dropout(cache) => nn::dropout_backward(&g, &cache)?,
                Step::Flatten(shape) => g.reshape(shape)?,
            };
        }
        Ok((grads, g))
    }
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
