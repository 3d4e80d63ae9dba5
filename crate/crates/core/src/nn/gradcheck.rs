//! Central finite-difference verification of hand-written backward passes.
//!
//! An operation with tensor output `y = f(inputs)` is reduced to the scalar
//! `L = <y, r>` for a fixed random projection `r`; the analytic gradients are
//! the backward pass evaluated at `grad_y = r`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tensor::Tensor;

pub const RELATIVE_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Maximum relative error between `backward` and central differences of `forward`.
///
/// `forward` must be a deterministic function of its inputs; it is evaluated
/// twice on the unperturbed inputs and any difference is reported as
/// [`Error::NonDeterministic`].
pub fn grad_check<F, B>(forward: F, backward: B, inputs: &[Tensor<f64>], eps: f64, seed: u64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    B: Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    let y = forward(inputs)?;
    let again = forward(inputs)?;
    if y.shape() != again.shape()
        || y.data()
            .iter()
            .zip(again.data())
            .any(|(a, b)| a.to_bits() != b.to_bits())
    {
        return Err(Error::NonDeterministic(
            "repeated forward pass produced different outputs".into(),
        ));
    }
    let mut rng = rng_from(seed);
    let projection = Tensor::from_fn(y.shape().to_vec(), |_| rng.random_range(-1.0..1.0));
    let objective = |xs: &[Tensor<f64>]| -> Result<f64> {
        let out = forward(xs)?;
        Ok(out.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum())
    };

    let analytic = backward(inputs, &projection)?;
    if analytic.len() != inputs.len() {
        return Err(Error::InvalidArgument(format!(
            "backward returned {} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (slot, grad) in analytic.iter().enumerate() {
        if grad.shape() != inputs[slot].shape() {
            return Err(Error::shape(
                "grad_check",
                format!("gradient {slot}"),
                format!("{:?} vs input {:?}", grad.shape(), inputs[slot].shape()),
            ));
        }
        for i in 0..inputs[slot].len() {
            let orig = inputs[slot].data()[i];
            work[slot].data_mut()[i] = orig + eps;
            let plus = objective(&work)?;
            work[slot].data_mut()[i] = orig - eps;
            let minus = objective(&work)?;
            work[slot].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_of_a_quadratic() {
        let x = Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap();
        let err = grad_check(
            |xs| Ok(xs[0].map(|v| v * v)),
            |xs, gy| {
                let data = xs[0].data().iter().zip(gy.data()).map(|(x, g)| 2.0 * x * g).collect();
                Ok(vec![Tensor::new([3], data)?])
            },
            &[x],
            1e-5,
            1,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Tensor::new([2], vec![0.5, -1.0]).unwrap();
        let err = grad_check(
            |xs| Ok(xs[0].map(|v| v * v)),
            |_, gy| Ok(vec![gy.clone()]),
            &[x],
            1e-5,
            1,
        )
        .unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn nondeterminism_is_an_error() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let x = Tensor::new([1], vec![1.0]).unwrap();
        let res = grad_check(
            |xs| {
                calls.set(calls.get() + 1.0);
                Ok(xs[0].map(|v| v + calls.get()))
            },
            |_, gy| Ok(vec![gy.clone()]),
            &[x],
            1e-5,
            0,
        );
        assert!(matches!(res, Err(Error::NonDeterministic(_))));
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let x = Tensor::new([1], vec![1.0]).unwrap();
        let r = grad_check(|xs| Ok(xs[0].clone()), |_, gy| Ok(vec![gy.clone()]), &[x], 1e-2, 0);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }
}
