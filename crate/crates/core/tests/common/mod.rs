//! Brute-force nested-loop references for the layer operations.

use anatomy_net::Tensor;

/// 3x3 cross-correlation with zero padding 1 and stride 1.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let f = w.shape()[0];
    let at = |img: usize, ch: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= wd as isize {
            0.0
        } else {
            x.data()[((img * c + ch) * h + i as usize) * wd + j as usize]
        }
    };
    let mut out = Vec::with_capacity(n * f * h * wd);
    for img in 0..n {
        for co in 0..f {
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = b.data()[co];
                    for ci in 0..c {
                        for di in 0..3 {
                            for dj in 0..3 {
                                let wv = w.data()[((co * c + ci) * 3 + di) * 3 + dj];
                                acc += at(img, ci, i as isize + di as isize - 1, j as isize + dj as isize - 1) * wv;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// 3x3 max pooling with stride 2 and no padding.
pub fn pool_oracle(x: &Tensor<f64>) -> Vec<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = ((h - 3) / 2 + 1, (w - 3) / 2 + 1);
    let mut out = Vec::new();
    for plane in 0..n * c {
        for i in 0..oh {
            for j in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for di in 0..3 {
                    for dj in 0..3 {
                        m = m.max(x.data()[(plane * h + 2 * i + di) * w + 2 * j + dj]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}
