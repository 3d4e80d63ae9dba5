//! Inverted dropout: survivors are scaled by `1/(1-p)` so inference is the identity.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::rng::rng_from;
use crate::tensor::{Scalar, Tensor};

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability must lie in [0,1), got {p}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DropoutCache {
    /// `None` when the forward pass was the identity.
    keep: Option<Vec<bool>>,
    scale: f64,
    shape: Vec<usize>,
}

impl DropoutCache {
    pub fn mask(&self) -> Option<&[bool]> {
        self.keep.as_deref()
    }
}

pub fn dropout_forward<T: Scalar>(x: &Tensor<T>, p: f64, mode: Mode, seed: u64) -> Result<(Tensor<T>, DropoutCache)> {
    check_probability(p)?;
    if mode == Mode::Infer || p == 0.0 {
        return Ok((
            x.clone(),
            DropoutCache {
                keep: None,
                scale: 1.0,
                shape: x.shape().to_vec(),
            },
        ));
    }
    let mut rng = rng_from(seed);
    let keep: Vec<bool> = (0..x.len()).map(|_| rng.random::<f64>() >= p).collect();
    let scale = 1.0 / (1.0 - p);
    let s = T::of(scale);
    let data = x
        .data()
        .iter()
        .zip(&keep)
        .map(|(&v, &k)| if k { v * s } else { T::zero() })
        .collect();
    Ok((
        Tensor::new(x.shape().to_vec(), data)?,
        DropoutCache {
            keep: Some(keep),
            scale,
            shape: x.shape().to_vec(),
        },
    ))
}

pub fn dropout_backward<T: Scalar>(grad_y: &Tensor<T>, cache: &DropoutCache) -> Result<Tensor<T>> {
    if grad_y.shape() != cache.shape.as_slice() {
        return Err(Error::shape(
            "dropout backward",
            "grad_y",
            format!("expected {:?}, got {:?}", cache.shape, grad_y.shape()),
        ));
    }
    match &cache.keep {
        None => Ok(grad_y.clone()),
        Some(keep) => {
            let s = T::of(cache.scale);
            let data = grad_y
                .data()
                .iter()
                .zip(keep)
                .map(|(&g, &k)| if k { g * s } else { T::zero() })
                .collect();
            Tensor::new(cache.shape.clone(), data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_and_infer_are_identity() {
        let x = Tensor::<f32>::from_fn([4, 5], |i| i as f32 - 3.5);
        assert_eq!(dropout_forward(&x, 0.0, Mode::Train, 1).unwrap().0, x);
        assert_eq!(dropout_forward(&x, 0.7, Mode::Infer, 1).unwrap().0, x);
    }

    #[test]
    fn binomial_keep_rate_and_mean() {
        let n = 1_000_000;
        let p = 0.5;
        let x = Tensor::<f64>::from_fn([n], |i| 1.0 + (i % 7) as f64);
        let (y, cache) = dropout_forward(&x, p, Mode::Train, 42).unwrap();
        let kept = cache.mask().unwrap().iter().filter(|k| **k).count() as f64 / n as f64;
        let bound = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((kept - (1.0 - p)).abs() < bound, "kept fraction {kept}");
        let mx = x.sum() / n as f64;
        let my = y.sum() / n as f64;
        assert!((my - mx).abs() / mx < 0.01);
    }

    #[test]
    fn zeros_only_at_masked_positions_and_reproducible() {
        let x = Tensor::<f64>::from_fn([1000], |i| 1.0 + i as f64);
        let (y, c) = dropout_forward(&x, 0.3, Mode::Train, 9).unwrap();
        let (y2, c2) = dropout_forward(&x, 0.3, Mode::Train, 9).unwrap();
        assert_eq!(y, y2);
        assert_eq!(c.mask(), c2.mask());
        for (v, k) in y.data().iter().zip(c.mask().unwrap()) {
            assert_eq!(*v == 0.0, !k);
        }
        let (y3, _) = dropout_forward(&x, 0.3, Mode::Train, 10).unwrap();
        assert_ne!(y, y3);
    }

    #[test]
    fn probability_one_is_rejected() {
        let x = Tensor::<f32>::zeros([3]);
        assert!(dropout_forward(&x, 1.0, Mode::Train, 0).is_err());
    }
}
