//! Bilinear sampling on `[C,H,W]` images with pixel centers at integer coordinates.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// What a sample outside the image reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Edge {
    /// Constant value for every out-of-bounds neighbour.
    Fill(f64),
    /// Nearest in-bounds pixel.
    Clamp,
}

/// Bilinear sample of one plane at `(x, y)` = (column, row).
///
/// The result is clamped to the range of the contributing neighbours, so
/// convex combinations never overshoot through rounding.
#[inline]
pub fn sample_bilinear(plane: &[f32], h: usize, w: usize, x: f64, y: f64, edge: Edge) -> f64 {
    let (x, y) = match edge {
        Edge::Clamp => (x.clamp(0.0, (w - 1) as f64), y.clamp(0.0, (h - 1) as f64)),
        Edge::Fill(_) => (x, y),
    };
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let at = |r: i64, c: i64| -> f64 {
        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
            plane[r as usize * w + c as usize] as f64
        } else {
            match edge {
                Edge::Fill(v) => v,
                Edge::Clamp => {
                    let rr = r.clamp(0, h as i64 - 1) as usize;
                    let cc = c.clamp(0, w as i64 - 1) as usize;
                    plane[rr * w + cc] as f64
                }
            }
        }
    };
    let p00 = at(y0, x0);
    if fx == 0.0 && fy == 0.0 {
        return p00;
    }
    let p01 = at(y0, x0 + 1);
    let p10 = at(y0 + 1, x0);
    let p11 = at(y0 + 1, x0 + 1);
    let top = p00 + (p01 - p00) * fx;
    let bottom = p10 + (p11 - p10) * fx;
    let v = top + (bottom - top) * fy;
    let lo = p00.min(p01).min(p10).min(p11);
    let hi = p00.max(p01).max(p10).max(p11);
    v.clamp(lo, hi)
}

pub(crate) fn image_dims(img: &Tensor<f32>, op: &'static str) -> Result<(usize, usize, usize)> {
    match img.shape() {
        &[c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        other => Err(Error::shape(
            op,
            "image",
            format!("expected non-empty [C,H,W], got {other:?}"),
        )),
    }
}

/// Resize with half-pixel alignment: output pixel `d` reads source `(d + 0.5) * in/out - 0.5`.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = image_dims(img, "resize")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target {out_h}x{out_w} is empty"
        )));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Tensor::zeros([c, out_h, out_w]);
    for ch in 0..c {
        let plane = img.outer(ch);
        let dst = out.outer_mut(ch);
        for i in 0..out_h {
            let y = (i as f64 + 0.5) * sy - 0.5;
            for j in 0..out_w {
                let x = (j as f64 + 0.5) * sx - 0.5;
                dst[i * out_w + j] = sample_bilinear(plane, h, w, x, y, Edge::Clamp) as f32;
            }
        }
    }
    Ok(out)
}

/// Copy the `crop_h x crop_w` window whose top-left corner is `(top, left)`.
pub fn crop(img: &Tensor<f32>, top: usize, left: usize, crop_h: usize, crop_w: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = image_dims(img, "crop")?;
    if crop_h == 0 || crop_w == 0 || top + crop_h > h || left + crop_w > w {
        return Err(Error::InvalidArgument(format!(
            "crop {crop_h}x{crop_w} at ({top},{left}) does not fit a {h}x{w} image"
        )));
    }
    let mut out = Tensor::zeros([c, crop_h, crop_w]);
    for ch in 0..c {
        let plane = img.outer(ch);
        let dst = out.outer_mut(ch);
        for i in 0..crop_h {
            let src = &plane[(top + i) * w + left..][..crop_w];
            dst[i * crop_w..(i + 1) * crop_w].copy_from_slice(src);
        }
    }
    Ok(out)
}
