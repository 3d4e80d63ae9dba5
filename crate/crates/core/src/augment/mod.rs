//! Geometric augmentation: resize/crop, rotation, translation, shear, stretch
//! and horizontal flip, composed into a single inverse affine warp per image.
//!
//! All coordinates are `(x, y)` = (column, row) with pixel centers on integers.
//! An [`AffineSpec`] maps *output* coordinates to *source* coordinates, so an
//! image is warped by iterating over output pixels and sampling bilinearly.

mod resample;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;

pub use resample::{crop, resize_bilinear, sample_bilinear, Edge};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotation_max_deg: f64,
    pub translate_max_frac: f64,
    pub shear_max_deg: f64,
    /// Isotropic resize factor range `[lo, hi]` with `0 < lo <= 1 <= hi`.
    pub scale_range: [f64; 2],
    /// Independent per-axis stretch range.
    pub stretch_range: [f64; 2],
    pub flip_prob: f64,
    /// Random-crop window `[H, W]` taken after the warp, then resized back.
    pub crop_to: [usize; 2],
    /// Value read outside the source image.
    pub fill: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_max_deg: 10.0,
            translate_max_frac: 0.1,
            shear_max_deg: 5.0,
            scale_range: [0.9, 1.1],
            stretch_range: [0.9, 1.1],
            flip_prob: 0.5,
            crop_to: [120, 120],
            fill: 0.0,
        }
    }
}

impl AugmentConfig {
    /// Every range collapsed: sampling yields the identity and no crop.
    pub fn disabled(image_size: [usize; 2]) -> Self {
        AugmentConfig {
            rotation_max_deg: 0.0,
            translate_max_frac: 0.0,
            shear_max_deg: 0.0,
            scale_range: [1.0, 1.0],
            stretch_range: [1.0, 1.0],
            flip_prob: 0.0,
            crop_to: image_size,
            fill: 0.0,
        }
    }

    pub fn is_identity(&self, image_size: [usize; 2]) -> bool {
        *self
            == AugmentConfig {
                fill: self.fill,
                ..Self::disabled(image_size)
            }
    }

    pub fn validate(&self, image_size: [usize; 2]) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("augment: {m}")));
        if !(self.rotation_max_deg >= 0.0 && self.rotation_max_deg <= 180.0) {
            return bad(format!("rotation_max_deg {} outside [0,180]", self.rotation_max_deg));
        }
        if !(0.0..=0.5).contains(&self.translate_max_frac) {
            return bad(format!(
                "translate_max_frac {} outside [0,0.5]",
                self.translate_max_frac
            ));
        }
        if !(self.shear_max_deg >= 0.0 && self.shear_max_deg < 60.0) {
            return bad(format!("shear_max_deg {} outside [0,60)", self.shear_max_deg));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= 1.0 && 1.0 <= hi && hi.is_finite()) {
            return bad(format!(
                "scale_range {:?} must satisfy 0 < lo <= 1 <= hi",
                self.scale_range
            ));
        }
        let [lo, hi] = self.stretch_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!(
                "stretch_range {:?} must satisfy 0 < lo <= hi",
                self.stretch_range
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob {} outside [0,1]", self.flip_prob));
        }
        if !(0.0..=1.0).contains(&self.fill) {
            return bad(format!("fill {} outside [0,1]", self.fill));
        }
        let [ch, cw] = self.crop_to;
        if ch == 0 || cw == 0 || ch > image_size[0] || cw > image_size[1] {
            return bad(format!(
                "crop_to {:?} must be non-empty and fit {:?}",
                self.crop_to, image_size
            ));
        }
        Ok(())
    }
}

/// The draws that produced an [`AffineSpec`], kept for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SampledParams {
    pub rotation_deg: f64,
    pub translate_frac: [f64; 2],
    pub shear_deg: f64,
    pub scale: f64,
    pub stretch: [f64; 2],
}

/// Inverse warp: `source = matrix * (x, y, 1)`, then optional horizontal flip of the output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineSpec {
    pub matrix: [[f64; 3]; 2],
    pub flip: bool,
    /// Output width, needed to express the flip as a coordinate map.
    pub width: usize,
    pub params: SampledParams,
}

type Mat3 = [[f64; 3]; 3];

fn mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn lift(m: &[[f64; 3]; 2]) -> Mat3 {
    [m[0], m[1], [0.0, 0.0, 1.0]]
}

fn translation(tx: f64, ty: f64) -> Mat3 {
    [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]
}

fn linear(a: f64, b: f64, c: f64, d: f64) -> Mat3 {
    [[a, b, 0.0], [c, d, 0.0], [0.0, 0.0, 1.0]]
}

fn mirror(width: usize) -> Mat3 {
    [[-1.0, 0.0, width as f64 - 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

impl AffineSpec {
    pub fn identity(width: usize) -> Self {
        AffineSpec {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            flip: false,
            width,
            params: SampledParams {
                scale: 1.0,
                stretch: [1.0, 1.0],
                ..Default::default()
            },
        }
    }

    /// Build the warp from explicit parameters, composed about the image center
    /// in the order scale, stretch, shear, rotate, translate.
    pub fn from_params(p: SampledParams, flip: bool, image_size: [usize; 2]) -> Self {
        let [h, w] = image_size;
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let theta = p.rotation_deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        let factors = [
            translation(cx, cy),
            linear(p.scale, 0.0, 0.0, p.scale),
            linear(p.stretch[0], 0.0, 0.0, p.stretch[1]),
            linear(1.0, p.shear_deg.to_radians().tan(), 0.0, 1.0),
            linear(cos, -sin, sin, cos),
            translation(p.translate_frac[0] * w as f64, p.translate_frac[1] * h as f64),
            translation(-cx, -cy),
        ];
        let m = factors.iter().skip(1).fold(factors[0], |acc, f| mul(&acc, f));
        AffineSpec {
            matrix: [m[0], m[1]],
            flip,
            width: w,
            params: p,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.matrix[0][0] * self.matrix[1][1] - self.matrix[0][1] * self.matrix[1][0]
    }

    /// Output coordinate to source coordinate, flip included.
    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let x = if self.flip { self.width as f64 - 1.0 - x } else { x };
        let m = &self.matrix;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    /// Single spec equivalent to warping with `self` and then with `then`.
    pub fn then(&self, then: &AffineSpec) -> AffineSpec {
        let fold = |s: &AffineSpec| {
            let m = lift(&s.matrix);
            if s.flip {
                mul(&m, &mirror(s.width))
            } else {
                m
            }
        };
        // out(p) = mid(M2 p) = src(M1 M2 p)
        let m = mul(&fold(self), &fold(then));
        AffineSpec {
            matrix: [m[0], m[1]],
            flip: false,
            width: then.width,
            params: SampledParams::default(),
        }
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draw one augmentation for an image of `image_size = [H, W]`.
pub fn sample_augmentation(cfg: &AugmentConfig, image_size: [usize; 2], seed: u64) -> AffineSpec {
    let mut rng = rng_from(seed);
    let r = cfg.rotation_max_deg;
    let t = cfg.translate_max_frac;
    let s = cfg.shear_max_deg;
    let p = SampledParams {
        rotation_deg: uniform(&mut rng, -r, r),
        translate_frac: [uniform(&mut rng, -t, t), uniform(&mut rng, -t, t)],
        shear_deg: uniform(&mut rng, -s, s),
        scale: uniform(&mut rng, cfg.scale_range[0], cfg.scale_range[1]),
        stretch: [
            uniform(&mut rng, cfg.stretch_range[0], cfg.stretch_range[1]),
            uniform(&mut rng, cfg.stretch_range[0], cfg.stretch_range[1]),
        ],
    };
    let flip = cfg.flip_prob > 0.0 && rng.random::<f64>() < cfg.flip_prob;
    AffineSpec::from_params(p, flip, image_size)
}

/// Warp every channel of `img` with bilinear sampling; out-of-bounds reads `fill`.
pub fn apply_affine(img: &Tensor<f32>, spec: &AffineSpec, fill: f64) -> Result<Tensor<f32>> {
    let (c, h, w) = resample::image_dims(img, "apply_affine")?;
    let det = spec.determinant();
    if !det.is_finite() || det.abs() <= 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "affine matrix is singular (determinant {det})"
        )));
    }
    let mut out = Tensor::zeros([c, h, w]);
    let m = &spec.matrix;
    for ch in 0..c {
        let plane = img.outer(ch);
        let dst = out.outer_mut(ch);
        for i in 0..h {
            for j in 0..w {
                let x = j as f64;
                let y = i as f64;
                let sx = m[0][0] * x + m[0][1] * y + m[0][2];
                let sy = m[1][0] * x + m[1][1] * y + m[1][2];
                let col = if spec.flip { w - 1 - j } else { j };
                dst[i * w + col] = sample_bilinear(plane, h, w, sx, sy, Edge::Fill(fill)) as f32;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Center,
    Random(u64),
}

/// Crop to `crop_to` (centered or at a seeded random offset), then resize to `target`.
pub fn crop_resize(img: &Tensor<f32>, crop_to: [usize; 2], target: [usize; 2], mode: CropMode) -> Result<Tensor<f32>> {
    let (_, h, w) = resample::image_dims(img, "crop_resize")?;
    let [ch, cw] = crop_to;
    if ch == 0 || cw == 0 || ch > h || cw > w {
        return Err(Error::InvalidArgument(format!(
            "crop {ch}x{cw} is larger than the {h}x{w} image"
        )));
    }
    let (top, left) = match mode {
        CropMode::Center => ((h - ch) / 2, (w - cw) / 2),
        CropMode::Random(seed) => {
            let mut rng = rng_from(seed);
            (rng.random_range(0..=h - ch), rng.random_range(0..=w - cw))
        }
    };
    let cropped = if (ch, cw) == (h, w) {
        img.clone()
    } else {
        crop(img, top, left, ch, cw)?
    };
    resize_bilinear(&cropped, target[0], target[1])
}

/// Full training-time transform of one image: sampled warp, random crop, resize back.
pub fn augment_image(img: &Tensor<f32>, cfg: &AugmentConfig, seed: u64) -> Result<Tensor<f32>> {
    let (_, h, w) = resample::image_dims(img, "augment")?;
    if cfg.is_identity([h, w]) {
        return Ok(img.clone());
    }
    let spec = sample_augmentation(cfg, [h, w], derive_seed(seed, &[0]));
    let warped = apply_affine(img, &spec, cfg.fill)?;
    crop_resize(&warped, cfg.crop_to, [h, w], CropMode::Random(derive_seed(seed, &[1])))
}
