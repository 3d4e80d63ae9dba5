//! Unpadded 3x3 max pooling with stride 2.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const WINDOW: usize = 3;
pub const STRIDE: usize = 2;

/// Spatial output extent: `floor((n - 3) / 2) + 1`.
pub fn pooled_extent(n: usize) -> Option<usize> {
    (n >= WINDOW).then(|| (n - WINDOW) / STRIDE + 1)
}

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    input_shape: Vec<usize>,
    /// Flat input index of the winning element for every output element.
    argmax: Vec<u32>,
}

impl MaxPoolCache {
    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }
}

pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, MaxPoolCache)> {
    let [n, c, h, w] = match x.shape() {
        &[n, c, h, w] => [n, c, h, w],
        other => {
            return Err(Error::shape(
                "maxpool",
                "input rank",
                format!("expected [N,C,H,W], got {other:?}"),
            ))
        }
    };
    let oh = pooled_extent(h)
        .ok_or_else(|| Error::shape("maxpool", "height", format!("{h} is smaller than the 3x3 window")))?;
    let ow = pooled_extent(w)
        .ok_or_else(|| Error::shape("maxpool", "width", format!("{w} is smaller than the 3x3 window")))?;
    if x.len() > u32::MAX as usize {
        return Err(Error::shape("maxpool", "input size", "more than 2^32 elements"));
    }
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let src = x.data();
    let out = y.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let (r0, c0) = (i * STRIDE, j * STRIDE);
                let mut best_idx = base + r0 * w + c0;
                let mut best = src[best_idx];
                for di in 0..WINDOW {
                    for dj in 0..WINDOW {
                        let idx = base + (r0 + di) * w + c0 + dj;
                        // Strict comparison keeps the first maximum in scan order.
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (plane * oh + i) * ow + j;
                out[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
    Ok((
        y,
        MaxPoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool_backward<T: Scalar>(grad_y: &Tensor<T>, cache: &MaxPoolCache) -> Result<Tensor<T>> {
    if grad_y.len() != cache.argmax.len() {
        return Err(Error::shape(
            "maxpool backward",
            "grad_y",
            format!("{} elements for {} pooled outputs", grad_y.len(), cache.argmax.len()),
        ));
    }
    let mut grad_x = Tensor::zeros(cache.input_shape.clone());
    let gx = grad_x.data_mut();
    for (&g, &idx) in grad_y.data().iter().zip(&cache.argmax) {
        gx[idx as usize] += g;
    }
    Ok(grad_x)
}
