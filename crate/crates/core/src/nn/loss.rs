use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `[N,K]` logits, computed with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let k = match logits.shape() {
        &[_, k] if k > 0 => k,
        other => {
            return Err(Error::shape(
                "softmax",
                "logits rank",
                format!("expected [N,K], got {other:?}"),
            ))
        }
    };
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        row.iter_mut().zip(exps).for_each(|(o, e)| *o = T::of(e / z));
    }
    Ok(out)
}

/// Mean negative log-likelihood of `labels` and its gradient `(softmax - onehot) / N`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (n, k) = match logits.shape() {
        &[n, k] if k > 0 => (n, k),
        other => {
            return Err(Error::shape(
                "softmax_cross_entropy",
                "logits rank",
                format!("expected [N,K], got {other:?}"),
            ))
        }
    };
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            "labels",
            format!("{} labels for batch of {n}", labels.len()),
        ));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {l} at row {i} is outside [0,{k})"
        )));
    }
    let mut grad = Tensor::zeros([n, k]);
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for (row, (g, &label)) in logits
        .data()
        .chunks_exact(k)
        .zip(grad.data_mut().chunks_exact_mut(k).zip(labels))
    {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let shifted: Vec<f64> = row.iter().map(|v| v.f64() - max).collect();
        let log_z = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
        total += log_z - shifted[label];
        for (j, (gj, s)) in g.iter_mut().zip(&shifted).enumerate() {
            let p = (s - log_z).exp();
            let onehot = if j == label { 1.0 } else { 0.0 };
            *gj = T::of((p - onehot) * inv_n);
        }
    }
    Ok((total * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::<f64>::zeros([3, 24]);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 5, 23]).unwrap();
        assert!((loss - 24f64.ln()).abs() < 1e-12);
        assert!((loss - 3.17805).abs() < 1e-5);
        assert!((grad.data()[1] - 1.0 / 24.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_class() {
        let mut logits = Tensor::<f64>::zeros([1, 24]);
        logits.data_mut()[7] = 50.0;
        let (loss, _) = softmax_cross_entropy(&logits, &[7]).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn shift_invariance() {
        let logits = Tensor::<f64>::from_fn([2, 5], |i| (i as f64 * 1.3).cos() * 4.0);
        let shifted = logits.map(|v| v + 123.0);
        let (a, _) = softmax_cross_entropy(&logits, &[1, 4]).unwrap();
        let (b, _) = softmax_cross_entropy(&shifted, &[1, 4]).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let logits = Tensor::<f32>::zeros([2, 3]);
        assert!(softmax_cross_entropy(&logits, &[0, 3]).is_err());
        assert!(softmax_cross_entropy(&logits, &[0]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Tensor::<f32>::from_fn([4, 6], |i| i as f32 * 0.7 - 9.0);
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks(6) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}
