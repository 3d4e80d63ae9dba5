//! Per-channel batch normalization over `[N,C]` or `[N,C,H,W]` inputs.
//!
//! Statistics are taken over every axis except the channel axis. Train mode
//! normalizes with the biased batch variance and folds the unbiased variance
//! into the running estimate; infer mode uses the running estimates only.

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Exponential moving averages of the batch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    /// Number of train-mode batches folded in so far.
    pub updates: u64,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros([channels]),
            var: Tensor::full([channels], T::one()),
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }
}

/// Standalone batch-norm layer state: affine parameters plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running: RunningStats<T>,
    pub config: BnConfig,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize, config: BnConfig) -> Self {
        BatchNormState {
            gamma: Tensor::full([channels], T::one()),
            beta: Tensor::zeros([channels]),
            running: RunningStats::new(channels),
            config,
        }
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        batchnorm_train(x, &self.gamma, &self.beta, &mut self.running, self.config)
    }

    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        batchnorm_infer(x, &self.gamma, &self.beta, &self.running, self.config, "standalone")
    }
}

/// Mode-dispatching entry point; infer mode never mutates `state`.
pub fn batchnorm<T: Scalar>(
    x: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    match mode {
        Mode::Train => state.forward_train(x),
        Mode::Infer => state.forward_infer(x),
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    /// Pre-affine normalized values, same shape as the input.
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
    mode: Mode,
}

impl<T: Scalar> BatchNormCache<T> {
    pub fn normalized(&self) -> &Tensor<T> {
        &self.x_hat
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// (batch, channels, spatial) extents of a BN input.
fn layout<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, s) = match x.shape() {
        [n, c] => (*n, *c, 1),
        [n, c, h, w] => (*n, *c, h * w),
        other => {
            return Err(Error::shape(
                "batchnorm",
                "input rank",
                format!("expected [N,C] or [N,C,H,W], got {other:?}"),
            ))
        }
    };
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "batchnorm",
            "channels",
            format!(
                "input has {c} channels, gamma {:?}, beta {:?}",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok((n, c, s))
}

fn for_channel<T: Copy>(data: &[T], n: usize, c: usize, s: usize, ch: usize, mut f: impl FnMut(T)) {
    for img in 0..n {
        let base = (img * c + ch) * s;
        data[base..base + s].iter().for_each(|&v| f(v));
    }
}

pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    cfg: BnConfig,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, s) = layout(x, gamma, beta)?;
    if running.channels() != c {
        return Err(Error::shape(
            "batchnorm",
            "running statistics",
            format!("{} channels vs input {c}", running.channels()),
        ));
    }
    let count = n * s;
    if count == 0 {
        return Err(Error::shape(
            "batchnorm",
            "batch size",
            "train mode needs a non-empty batch",
        ));
    }
    let mut means = vec![0.0f64; c];
    let mut vars = vec![0.0f64; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for_channel(x.data(), n, c, s, ch, |v| sum += v.f64());
        let mean = sum / count as f64;
        let mut sq = 0.0;
        for_channel(x.data(), n, c, s, ch, |v| {
            let d = v.f64() - mean;
            sq += d * d;
        });
        means[ch] = mean;
        vars[ch] = sq / count as f64;
    }

    let mut x_hat = Tensor::zeros(x.shape().to_vec());
    let mut y = Tensor::zeros(x.shape().to_vec());
    let inv_std: Vec<T> = vars.iter().map(|v| T::of(1.0 / (v + cfg.eps).sqrt())).collect();
    normalize(x, &means, &inv_std, gamma, beta, (n, c, s), &mut x_hat, &mut y);

    // a single value has no unbiased variance; leave the running estimates alone
    let m = cfg.momentum;
    let unbias = count as f64 / (count as f64 - 1.0);
    for ch in (0..c).filter(|_| count > 1) {
        let rm = &mut running.mean.data_mut()[ch];
        *rm = T::of(m * rm.f64() + (1.0 - m) * means[ch]);
        let rv = &mut running.var.data_mut()[ch];
        *rv = T::of(m * rv.f64() + (1.0 - m) * vars[ch] * unbias);
    }
    running.updates += u64::from(count > 1);

    Ok((
        y,
        BatchNormCache {
            x_hat,
            inv_std,
            gamma: gamma.data().to_vec(),
            mode: Mode::Train,
        },
    ))
}

pub fn batchnorm_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &RunningStats<T>,
    cfg: BnConfig,
    site: &str,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, s) = layout(x, gamma, beta)?;
    if running.channels() != c {
        return Err(Error::shape(
            "batchnorm",
            "running statistics",
            format!("{} channels vs input {c}", running.channels()),
        ));
    }
    if running.updates == 0 {
        return Err(Error::StatsNotInitialized { site: site.to_string() });
    }
    let means: Vec<f64> = running.mean.data().iter().map(|v| v.f64()).collect();
    let inv_std: Vec<T> = running
        .var
        .data()
        .iter()
        .map(|v| T::of(1.0 / (v.f64() + cfg.eps).sqrt()))
        .collect();
    let mut x_hat = Tensor::zeros(x.shape().to_vec());
    let mut y = Tensor::zeros(x.shape().to_vec());
    normalize(x, &means, &inv_std, gamma, beta, (n, c, s), &mut x_hat, &mut y);
    Ok((
        y,
        BatchNormCache {
            x_hat,
            inv_std,
            gamma: gamma.data().to_vec(),
            mode: Mode::Infer,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn normalize<T: Scalar>(
    x: &Tensor<T>,
    means: &[f64],
    inv_std: &[T],
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    (n, c, s): (usize, usize, usize),
    x_hat: &mut Tensor<T>,
    y: &mut Tensor<T>,
) {
    for img in 0..n {
        for ch in 0..c {
            let base = (img * c + ch) * s;
            let mean = T::of(means[ch]);
            let (g, b, is) = (gamma.data()[ch], beta.data()[ch], inv_std[ch]);
            let src = &x.data()[base..base + s];
            let xh = &mut x_hat.data_mut()[base..base + s];
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - mean) * is;
            }
            let out = &mut y.data_mut()[base..base + s];
            for (o, &h) in out.iter_mut().zip(xh.iter()) {
                *o = g * h + b;
            }
        }
    }
}

pub fn batchnorm_backward<T: Scalar>(grad_y: &Tensor<T>, cache: &BatchNormCache<T>) -> Result<BatchNormGrads<T>> {
    let x_hat = &cache.x_hat;
    if grad_y.shape() != x_hat.shape() {
        return Err(Error::shape(
            "batchnorm backward",
            "grad_y",
            format!("expected {:?}, got {:?}", x_hat.shape(), grad_y.shape()),
        ));
    }
    let c = cache.gamma.len();
    let n = x_hat.shape()[0];
    let s = x_hat.len() / (n * c);
    let count = (n * s) as f64;
    let mut grad_gamma = Tensor::zeros([c]);
    let mut grad_beta = Tensor::zeros([c]);
    let mut grad_x = Tensor::zeros(x_hat.shape().to_vec());
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xh) = (0.0f64, 0.0f64);
        for img in 0..n {
            let base = (img * c + ch) * s;
            for (dy, xh) in grad_y.data()[base..base + s].iter().zip(&x_hat.data()[base..base + s]) {
                sum_dy += dy.f64();
                sum_dy_xh += dy.f64() * xh.f64();
            }
        }
        grad_gamma.data_mut()[ch] = T::of(sum_dy_xh);
        grad_beta.data_mut()[ch] = T::of(sum_dy);
        let g = cache.gamma[ch];
        let is = cache.inv_std[ch];
        match cache.mode {
            Mode::Infer => {
                let scale = g * is;
                for img in 0..n {
                    let base = (img * c + ch) * s;
                    for (dx, &dy) in grad_x.data_mut()[base..base + s]
                        .iter_mut()
                        .zip(&grad_y.data()[base..base + s])
                    {
                        *dx = dy * scale;
                    }
                }
            }
            Mode::Train => {
                // dx = g*inv_std * (dy - mean(dy) - x_hat * mean(dy*x_hat))
                let scale = g * is;
                let mean_dy = T::of(sum_dy / count);
                let mean_dy_xh = T::of(sum_dy_xh / count);
                for img in 0..n {
                    let base = (img * c + ch) * s;
                    let dys = &grad_y.data()[base..base + s];
                    let xhs = &x_hat.data()[base..base + s];
                    for ((dx, &dy), &xh) in grad_x.data_mut()[base..base + s].iter_mut().zip(dys).zip(xhs) {
                        *dx = scale * (dy - mean_dy - xh * mean_dy_xh);
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: grad_x,
        gamma: grad_gamma,
        beta: grad_beta,
    })
}
