//! Procedural stand-in corpus of grayscale "phantom" radiographs.
//!
//! A class is a (shape, fill texture) pair. Shapes are bars, ellipses, and
//! junctions, all mirror-symmetric about the vertical axis so horizontal flips
//! keep their label. Textures share one mean intensity and use a random
//! phase, which leaves them invisible to any fixed linear template.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::data::image::save_png;
use crate::data::manifest::{write_raw_manifest, RawRecord};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;

pub const MAX_SYNTHETIC_CLASSES: usize = 24;
pub const SYNTH_SIZE: usize = 128;

const SHAPES: usize = 6;
const STRIPE_PERIOD: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    HorizontalBar,
    VerticalBar,
    Ellipse,
    Ring,
    Cross,
    TJunction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Texture {
    Solid,
    HorizontalStripes,
    VerticalStripes,
    Checker,
}

fn class_parts(k: usize) -> (Shape, Texture) {
    use Shape::*;
    use Texture::*;
    let shape = [HorizontalBar, VerticalBar, Ellipse, Ring, Cross, TJunction][k % SHAPES];
    let texture = [Solid, HorizontalStripes, VerticalStripes, Checker][k / SHAPES];
    (shape, texture)
}

/// Hierarchical code of synthetic class `k`: shape on the second axis, texture on the third.
pub fn synthetic_code(k: usize) -> String {
    format!("1121-{:03}-{:03}-700", 110 + 10 * (k % SHAPES), 200 + 10 * (k / SHAPES))
}

fn inside(shape: Shape, u: f64, v: f64) -> bool {
    let (au, av) = (u.abs(), v.abs());
    match shape {
        Shape::HorizontalBar => au < 42.0 && av < 12.0,
        Shape::VerticalBar => au < 12.0 && av < 42.0,
        Shape::Ellipse => (u / 34.0).powi(2) + (v / 26.0).powi(2) < 1.0,
        Shape::Ring => {
            let r = (u * u + v * v).sqrt();
            (20.0..34.0).contains(&r)
        }
        Shape::Cross => (au < 38.0 && av < 9.0) || (au < 9.0 && av < 38.0),
        Shape::TJunction => (au < 38.0 && (-36.0..-20.0).contains(&v)) || (au < 9.0 && (-36.0..36.0).contains(&v)),
    }
}

fn square_wave(t: f64) -> f64 {
    if t.rem_euclid(STRIPE_PERIOD) < STRIPE_PERIOD / 2.0 {
        1.0
    } else {
        -1.0
    }
}

fn texture_at(texture: Texture, u: f64, v: f64, phase: (f64, f64)) -> f64 {
    match texture {
        Texture::Solid => 0.0,
        Texture::HorizontalStripes => square_wave(v + phase.1),
        Texture::VerticalStripes => square_wave(u + phase.0),
        Texture::Checker => square_wave(u + phase.0) * square_wave(v + phase.1),
    }
}

/// Render one `[1,128,128]` image of class `k`; a pure function of `(k, seed)`.
pub fn render_phantom(k: usize, seed: u64) -> Result<Tensor<f32>> {
    if k >= MAX_SYNTHETIC_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "synthetic class {k} out of range (at most {MAX_SYNTHETIC_CLASSES} classes)"
        )));
    }
    let (shape, texture) = class_parts(k);
    let mut rng = rng_from(seed);
    let n = SYNTH_SIZE as f64;
    let cx = (n - 1.0) / 2.0 + rng.random_range(-12.0..12.0);
    let cy = (n - 1.0) / 2.0 + rng.random_range(-12.0..12.0);
    let scale = rng.random_range(0.85..1.15);
    let level = rng.random_range(0.5..0.7);
    let amplitude = 0.22;
    let phase = (
        rng.random_range(0.0..STRIPE_PERIOD),
        rng.random_range(0.0..STRIPE_PERIOD),
    );
    let background = rng.random_range(0.05..0.15);
    let tilt = rng.random_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (0.05 * tilt.cos() / n, 0.05 * tilt.sin() / n);
    let noise = Normal::new(0.0, 0.03).expect("valid sigma");

    let mut img = Tensor::zeros([1, SYNTH_SIZE, SYNTH_SIZE]);
    for (idx, px) in img.data_mut().iter_mut().enumerate() {
        let (y, x) = ((idx / SYNTH_SIZE) as f64, (idx % SYNTH_SIZE) as f64);
        let (u, v) = (x - cx, y - cy);
        let base = if inside(shape, u / scale, v / scale) {
            level + amplitude * texture_at(texture, u, v, phase)
        } else {
            background + gx * (x - cx) + gy * (y - cy)
        };
        *px = (base + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
    }
    Ok(img)
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub manifest_path: PathBuf,
    pub records: Vec<RawRecord>,
}

/// Write `num_classes * per_class` PNGs under `out_dir/images` and a `manifest.csv`.
pub fn generate_synthetic_corpus(
    num_classes: usize,
    per_class: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<SyntheticCorpus> {
    validate_corpus_args(num_classes, per_class)?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut records = Vec::with_capacity(num_classes * per_class);
    for k in 0..num_classes {
        for i in 0..per_class {
            let rel = format!("images/c{k:02}_{i:04}.png");
            let img = render_phantom(k, derive_seed(seed, &[k as u64, i as u64]))?;
            save_png(&img, &out_dir.join(&rel))?;
            records.push(RawRecord::new(rel, synthetic_code(k)));
        }
    }
    let manifest_path = out_dir.join("manifest.csv");
    write_raw_manifest(&records, &manifest_path)?;
    Ok(SyntheticCorpus { manifest_path, records })
}

pub fn validate_corpus_args(num_classes: usize, per_class: usize) -> Result<()> {
    if num_classes == 0 || num_classes > MAX_SYNTHETIC_CLASSES {
        return Err(Error::Config(format!(
            "synthetic class count {num_classes} outside 1..={MAX_SYNTHETIC_CLASSES}"
        )));
    }
    if per_class == 0 {
        return Err(Error::Config(
            "synthetic corpus needs at least one image per class".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn codes_are_distinct_and_hierarchical() {
        let codes: BTreeSet<_> = (0..MAX_SYNTHETIC_CLASSES).map(synthetic_code).collect();
        assert_eq!(codes.len(), MAX_SYNTHETIC_CLASSES);
        assert!(codes.iter().all(|c| c.split('-').count() == 4));
    }

    #[test]
    fn shapes_are_mirror_symmetric() {
        for k in 0..SHAPES {
            let (shape, _) = class_parts(k);
            for v in -40..40 {
                for u in 0..45 {
                    let (u, v) = (u as f64 + 0.5, v as f64 + 0.5);
                    assert_eq!(inside(shape, u, v), inside(shape, -u, v));
                }
            }
        }
    }

    #[test]
    fn textures_share_the_solid_mean() {
        for t in [Texture::HorizontalStripes, Texture::VerticalStripes, Texture::Checker] {
            let mut s = 0.0;
            for v in 0..64 {
                for u in 0..64 {
                    s += texture_at(t, u as f64, v as f64, (1.3, 2.7));
                }
            }
            assert!(s.abs() < 1e-9, "{t:?}: {s}");
        }
    }

    #[test]
    fn rendering_is_deterministic_and_bounded() {
        let a = render_phantom(17, 99).unwrap();
        assert_eq!(a, render_phantom(17, 99).unwrap());
        assert_ne!(a, render_phantom(17, 100).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(render_phantom(24, 0).is_err());
    }

    #[test]
    fn class_count_bound() {
        assert!(validate_corpus_args(24, 1).is_ok());
        assert!(validate_corpus_args(25, 1).is_err());
        assert!(validate_corpus_args(0, 1).is_err());
    }
}
