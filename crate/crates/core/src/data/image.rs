//! Grayscale raster loading into `[1,H,W]` tensors in `[0,1]`.

use std::path::Path;

use image::{DynamicImage, ImageReader};

use crate::augment::{crop, resize_bilinear};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_IMAGE_SIZE: [usize; 2] = [128, 128];

pub fn decode_image(path: &Path) -> Result<Tensor<f32>> {
    let img_err = |message: String| Error::Image {
        path: path.to_path_buf(),
        message,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| img_err(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        other => other
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 65535.0)
            .collect(),
    };
    Tensor::new([1, h, w], data)
}

/// Scale so the image covers `target` with its aspect ratio kept, then center crop.
pub fn fit_center(img: &Tensor<f32>, target: [usize; 2]) -> Result<Tensor<f32>> {
    let (h, w) = match img.shape() {
        &[_, h, w] => (h, w),
        other => {
            return Err(Error::shape(
                "fit_center",
                "image",
                format!("expected [C,H,W], got {other:?}"),
            ))
        }
    };
    let [th, tw] = target;
    if [h, w] == target {
        return Ok(img.clone());
    }
    let scale = (th as f64 / h as f64).max(tw as f64 / w as f64);
    let sh = ((h as f64 * scale).round() as usize).max(th);
    let sw = ((w as f64 * scale).round() as usize).max(tw);
    let scaled = resize_bilinear(img, sh, sw)?;
    crop(&scaled, (sh - th) / 2, (sw - tw) / 2, th, tw)
}

/// Decode `path` and bring it to `target` size.
pub fn load_image(path: &Path, target: [usize; 2]) -> Result<Tensor<f32>> {
    fit_center(&decode_image(path)?, target)
}

pub fn save_png(img: &Tensor<f32>, path: &Path) -> Result<()> {
    let (h, w) = match img.shape() {
        &[1, h, w] => (h, w),
        other => {
            return Err(Error::shape(
                "save_png",
                "image",
                format!("expected [1,H,W], got {other:?}"),
            ))
        }
    };
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::save_buffer(path, &bytes, w as u32, h as u32, image::ColorType::L8).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
