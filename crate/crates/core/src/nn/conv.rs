//! 3x3 same-padded convolution (cross-correlation) via im2col + GEMM.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Forward record for [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct Conv2dCache<T> {
    input: Tensor<T>,
    weight: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check_shapes<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if x.ndim() != 4 {
        return Err(Error::shape(
            "conv2d",
            "input rank",
            format!("expected [N,C,H,W], got {:?}", x.shape()),
        ));
    }
    if w.ndim() != 4 {
        return Err(Error::shape(
            "conv2d",
            "weight rank",
            format!("expected [Cout,Cin,3,3], got {:?}", w.shape()),
        ));
    }
    if w.shape()[2] != KERNEL || w.shape()[3] != KERNEL {
        return Err(Error::shape(
            "conv2d",
            "kernel size",
            format!("only 3x3 kernels are supported, got {}x{}", w.shape()[2], w.shape()[3]),
        ));
    }
    if w.shape()[1] != x.shape()[1] {
        return Err(Error::shape(
            "conv2d",
            "input channels",
            format!("input has {} channels, weight expects {}", x.shape()[1], w.shape()[1]),
        ));
    }
    if b.shape() != [w.shape()[0]] {
        return Err(Error::shape(
            "conv2d",
            "bias length",
            format!("bias {:?} does not match {} output channels", b.shape(), w.shape()[0]),
        ));
    }
    Ok(())
}

/// Unfold one image `[C,H,W]` into columns `[C*9, H*W]` with zero padding 1.
fn im2col<T: Scalar>(img: &[T], channels: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &img[c * hw..(c + 1) * hw];
        for di in 0..KERNEL {
            for dj in 0..KERNEL {
                let row = &mut cols[((c * TAPS) + di * KERNEL + dj) * hw..][..hw];
                for i in 0..h {
                    let out = &mut row[i * w..(i + 1) * w];
                    let si = i as isize + di as isize - 1;
                    if si < 0 || si >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    match dj {
                        0 => {
                            out[0] = T::zero();
                            out[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => out.copy_from_slice(src),
                        _ => {
                            out[..w - 1].copy_from_slice(&src[1..]);
                            out[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Fold columns back, accumulating into `img` (adjoint of [`im2col`]).
fn col2im<T: Scalar>(cols: &[T], channels: usize, h: usize, w: usize, img: &mut [T]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &mut img[c * hw..(c + 1) * hw];
        for di in 0..KERNEL {
            for dj in 0..KERNEL {
                let row = &cols[((c * TAPS) + di * KERNEL + dj) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + di as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src = &row[i * w..(i + 1) * w];
                    let dst = &mut plane[si as usize * w..(si as usize + 1) * w];
                    match dj {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += *s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += *s),
                    }
                }
            }
        }
    }
}

/// `y[n,co,i,j] = b[co] + sum x[n,ci,i+di-1,j+dj-1] * w[co,ci,di,dj]`, zero outside bounds.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, Conv2dCache<T>)> {
    check_shapes(x, w, b)?;
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let cout = w.shape()[0];
    let hw = h * wd;
    let k = cin * TAPS;
    let mut y = Tensor::zeros([n, cout, h, wd]);
    let mut cols = vec![T::zero(); k * hw];
    for img in 0..n {
        im2col(x.outer(img), cin, h, wd, &mut cols);
        let out = y.outer_mut(img);
        for (co, plane) in out.chunks_exact_mut(hw).enumerate() {
            plane.fill(b.data()[co]);
        }
        gemm(
            T::one(),
            MatRef::new(w.data(), cout, k),
            MatRef::new(&cols, k, hw),
            T::one(),
            out,
        );
    }
    Ok((
        y,
        Conv2dCache {
            input: x.clone(),
            weight: w.clone(),
        },
    ))
}

pub fn conv2d_backward<T: Scalar>(grad_y: &Tensor<T>, cache: &Conv2dCache<T>) -> Result<Conv2dGrads<T>> {
    let x = &cache.input;
    let w = &cache.weight;
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let cout = w.shape()[0];
    if grad_y.shape() != [n, cout, h, wd] {
        return Err(Error::shape(
            "conv2d backward",
            "grad_y",
            format!("expected {:?}, got {:?}", [n, cout, h, wd], grad_y.shape()),
        ));
    }
    let hw = h * wd;
    let k = cin * TAPS;
    let mut grad_x = Tensor::zeros(x.shape().to_vec());
    let mut grad_w = Tensor::zeros(w.shape().to_vec());
    let mut grad_b = Tensor::zeros([cout]);
    let mut cols = vec![T::zero(); k * hw];
    let mut grad_cols = vec![T::zero(); k * hw];
    for img in 0..n {
        let gy = grad_y.outer(img);
        for (co, plane) in gy.chunks_exact(hw).enumerate() {
            grad_b.data_mut()[co] += plane.iter().copied().sum::<T>();
        }
        im2col(x.outer(img), cin, h, wd, &mut cols);
        gemm(
            T::one(),
            MatRef::new(gy, cout, hw),
            MatRef::new(&cols, k, hw).t(),
            T::one(),
            grad_w.data_mut(),
        );
        gemm(
            T::one(),
            MatRef::new(w.data(), cout, k).t(),
            MatRef::new(gy, cout, hw),
            T::zero(),
            &mut grad_cols,
        );
        col2im(&grad_cols, cin, h, wd, grad_x.outer_mut(img));
    }
    Ok(Conv2dGrads {
        input: grad_x,
        weight: grad_w,
        bias: grad_b,
    })
}
