use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationConfig {
    pub leaky_slope: f64,
    pub dropout_p: f64,
}

impl ActivationConfig {
    pub fn validate(&self) -> Result<()> {
        check_slope(self.leaky_slope)?;
        crate::nn::dropout::check_probability(self.dropout_p)
    }
}

fn check_slope(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "leaky slope must lie in [0,1), got {alpha}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LeakyReluCache {
    positive: Vec<bool>,
    shape: Vec<usize>,
    alpha: f64,
}

/// `x` where `x > 0`, `alpha * x` otherwise.
pub fn leaky_relu_forward<T: Scalar>(x: &Tensor<T>, alpha: f64) -> Result<(Tensor<T>, LeakyReluCache)> {
    check_slope(alpha)?;
    let a = T::of(alpha);
    let positive: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    let y = x.map(|v| if v > T::zero() { v } else { a * v });
    Ok((
        y,
        LeakyReluCache {
            positive,
            shape: x.shape().to_vec(),
            alpha,
        },
    ))
}

/// The derivative at exactly zero is taken to be `alpha`.
pub fn leaky_relu_backward<T: Scalar>(grad_y: &Tensor<T>, cache: &LeakyReluCache) -> Result<Tensor<T>> {
    if grad_y.shape() != cache.shape.as_slice() {
        return Err(Error::shape(
            "leaky_relu backward",
            "grad_y",
            format!("expected {:?}, got {:?}", cache.shape, grad_y.shape()),
        ));
    }
    let a = T::of(cache.alpha);
    let data = grad_y
        .data()
        .iter()
        .zip(&cache.positive)
        .map(|(&g, &p)| if p { g } else { a * g })
        .collect();
    Tensor::new(cache.shape.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_values() {
        let x = Tensor::<f64>::new([3], vec![2.0, -1.0, 0.0]).unwrap();
        let (y, cache) = leaky_relu_forward(&x, 0.1).unwrap();
        assert_eq!(y.data(), &[2.0, -0.1, 0.0]);
        let g = leaky_relu_backward(&Tensor::full([3], 1.0), &cache).unwrap();
        assert_eq!(g.data(), &[1.0, 0.1, 0.1]);
    }

    #[test]
    fn slope_near_one_approaches_identity() {
        let alpha = 0.999;
        let x = Tensor::<f64>::from_fn([10], |i| i as f64 - 6.0);
        let (y, _) = leaky_relu_forward(&x, alpha).unwrap();
        let max_neg = x
            .data()
            .iter()
            .filter(|v| **v < 0.0)
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        let gap = y.max_abs_diff(&x).unwrap();
        assert!((gap - (1.0 - alpha) * max_neg).abs() < 1e-12);
    }

    #[test]
    fn slope_out_of_range_is_rejected() {
        let x = Tensor::<f32>::zeros([2]);
        assert!(leaky_relu_forward(&x, 1.0).is_err());
        assert!(leaky_relu_forward(&x, -0.1).is_err());
        assert!(ActivationConfig {
            leaky_slope: 0.01,
            dropout_p: 1.0
        }
        .validate()
        .is_err());
    }
}
