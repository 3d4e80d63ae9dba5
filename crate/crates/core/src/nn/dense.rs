use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct DenseCache<T> {
    input: Tensor<T>,
    weight: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// `y = x W + b` with `x: [N,D]`, `W: [D,M]`, `b: [M]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, DenseCache<T>)> {
    let (n, d) = match x.shape() {
        &[n, d] => (n, d),
        other => {
            return Err(Error::shape(
                "dense",
                "input rank",
                format!("expected [N,D], got {other:?}"),
            ))
        }
    };
    let m = match w.shape() {
        &[wd, m] if wd == d => m,
        &[wd, _] => {
            return Err(Error::shape(
                "dense",
                "inner dimension",
                format!("input has D={d}, weight has {wd} rows"),
            ))
        }
        other => {
            return Err(Error::shape(
                "dense",
                "weight rank",
                format!("expected [D,M], got {other:?}"),
            ))
        }
    };
    if b.shape() != [m] {
        return Err(Error::shape(
            "dense",
            "bias length",
            format!("bias {:?} for M={m}", b.shape()),
        ));
    }
    let mut y = Tensor::zeros([n, m]);
    for row in y.data_mut().chunks_exact_mut(m) {
        row.copy_from_slice(b.data());
    }
    gemm(
        T::one(),
        MatRef::new(x.data(), n, d),
        MatRef::new(w.data(), d, m),
        T::one(),
        y.data_mut(),
    );
    Ok((
        y,
        DenseCache {
            input: x.clone(),
            weight: w.clone(),
        },
    ))
}

pub fn dense_backward<T: Scalar>(grad_y: &Tensor<T>, cache: &DenseCache<T>) -> Result<DenseGrads<T>> {
    let (n, d) = (cache.input.shape()[0], cache.input.shape()[1]);
    let m = cache.weight.shape()[1];
    if grad_y.shape() != [n, m] {
        return Err(Error::shape(
            "dense backward",
            "grad_y",
            format!("expected {:?}, got {:?}", [n, m], grad_y.shape()),
        ));
    }
    let mut grad_x = Tensor::zeros([n, d]);
    gemm(
        T::one(),
        MatRef::new(grad_y.data(), n, m),
        MatRef::new(cache.weight.data(), d, m).t(),
        T::zero(),
        grad_x.data_mut(),
    );
    let mut grad_w = Tensor::zeros([d, m]);
    gemm(
        T::one(),
        MatRef::new(cache.input.data(), n, d).t(),
        MatRef::new(grad_y.data(), n, m),
        T::zero(),
        grad_w.data_mut(),
    );
    let mut grad_b = Tensor::zeros([m]);
    for row in grad_y.data().chunks_exact(m) {
        grad_b.data_mut().iter_mut().zip(row).for_each(|(acc, &g)| *acc += g);
    }
    Ok(DenseGrads {
        input: grad_x,
        weight: grad_w,
        bias: grad_b,
    })
}
