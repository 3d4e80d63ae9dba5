use std::path::Path;

use crate::augment::{augment_image, AugmentConfig};
use crate::data::{load_image, resolve_path, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded `[1,H,W]` images with their class ids, held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl ImageSet {
    pub fn new(images: Vec<Tensor<f32>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!("label {bad} outside {num_classes} classes")));
        }
        if let Some(first) = images.first() {
            if let Some(odd) = images.iter().position(|t| t.shape() != first.shape()) {
                return Err(Error::Data(format!(
                    "image {odd} has shape {:?}, expected {:?}",
                    images[odd].shape(),
                    first.shape()
                )));
            }
        }
        Ok(ImageSet {
            images,
            labels,
            num_classes,
        })
    }

    /// Load every record of `split`, resolving relative paths against `base_dir`.
    pub fn from_manifest(
        manifest: &DatasetManifest,
        base_dir: &Path,
        split: Split,
        target: [usize; 2],
    ) -> Result<Self> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for r in manifest.split(split) {
            images.push(load_image(&resolve_path(base_dir, &r.image_path), target)?);
            labels.push(r.class_id);
        }
        ImageSet::new(images, labels, manifest.num_classes())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> ImageSet {
        ImageSet {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Stack `indices` into `[B,C,H,W]`, optionally augmenting image `i` with `seed_of(i)`.
    pub fn batch(
        &self,
        indices: &[usize],
        augment: Option<(&AugmentConfig, &dyn Fn(usize) -> u64)>,
    ) -> Result<(Tensor<f32>, Vec<usize>)> {
        let mut items = Vec::with_capacity(indices.len());
        for &i in indices {
            let img = &self.images[i];
            items.push(match augment {
                Some((cfg, seed_of)) => augment_image(img, cfg, seed_of(i))?,
                None => img.clone(),
            });
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::stack(&items)?, labels))
    }
}
