use crate::error::{Error, Result};
use crate::model::ParamMap;
use crate::tensor::{Scalar, Tensor};

/// Zero velocity matching every parameter.
pub fn zero_velocity<T: Scalar>(params: &ParamMap<T>) -> ParamMap<T> {
    params
        .iter()
        .map(|(k, p)| (k.clone(), Tensor::zeros(p.shape().to_vec())))
        .collect()
}

/// `v <- momentum*v - lr*(g + weight_decay*p)`, then `p <- p + v`.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut ParamMap<T>,
    grads: &ParamMap<T>,
    velocity: &mut ParamMap<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !params.keys().eq(grads.keys()) || !params.keys().eq(velocity.keys()) {
        let describe = |m: &ParamMap<T>| m.keys().cloned().collect::<Vec<_>>().join(",");
        return Err(Error::InvalidArgument(format!(
            "optimizer key sets differ: params [{}], grads [{}], velocity [{}]",
            describe(params),
            describe(grads),
            describe(velocity)
        )));
    }
    let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    for ((name, p), (g, v)) in params.iter_mut().zip(grads.values().zip(velocity.values_mut())) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::shape(
                "sgd_momentum_step",
                name.clone(),
                format!("param {:?}, grad {:?}, velocity {:?}", p.shape(), g.shape(), v.shape()),
            ));
        }
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi - lr * (gi + wd * *pi);
            *pi += *vi;
        }
    }
    Ok(())
}
