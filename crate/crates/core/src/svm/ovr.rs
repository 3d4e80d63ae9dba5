use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::data::FeatureSet;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::svm::solver::{dot, train_binary, Samples, SolverControls};
use crate::tensor::Tensor;

pub const SVM_KIND: &str = "svm";

/// One-vs-rest linear classifier; row `k` of `w` scores class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassSvm {
    /// `[K, D]`.
    pub w: Tensor<f64>,
    /// `[K]`.
    pub b: Tensor<f64>,
    pub trained_c: f64,
    pub classes: Vec<String>,
    pub l2_normalize: bool,
}

#[derive(Serialize, Deserialize)]
struct SvmMeta {
    trained_c: f64,
    classes: Vec<String>,
    l2_normalize: bool,
}

/// Class ids present in `features`, checked to cover `0..K` with `K >= 2`.
pub fn class_count(features: &FeatureSet) -> Result<usize> {
    let k = features.num_classes();
    let mut seen = vec![false; k];
    for &c in &features.class_ids {
        seen[c] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!("class {missing} has no training samples")));
    }
    if k < 2 {
        return Err(Error::Data(format!(
            "multi-class SVM needs at least 2 classes, found {k}"
        )));
    }
    Ok(k)
}

pub fn train_ovr(features: &FeatureSet, c: f64, controls: &SolverControls) -> Result<MulticlassSvm> {
    let k = class_count(features)?;
    let (m, d) = (features.len(), features.dim());
    let x = Samples::new(features.vectors.data(), m, d)?;
    let mut w = Vec::with_capacity(k * d);
    let mut b = Vec::with_capacity(k);
    for class in 0..k {
        let y: Vec<f64> = features
            .class_ids
            .iter()
            .map(|&cid| if cid == class { 1.0 } else { -1.0 })
            .collect();
        let ctl = SolverControls {
            seed: derive_seed(controls.seed, &[class as u64]),
            ..controls.clone()
        };
        let sol = train_binary(&x, &y, c, &ctl)?;
        log::debug!(
            "class {class}: objective {:.6} after {} epochs",
            sol.objective,
            sol.epochs
        );
        w.extend(sol.w);
        b.push(sol.b);
    }
    Ok(MulticlassSvm {
        w: Tensor::new([k, d], w)?,
        b: Tensor::new([k], b)?,
        trained_c: c,
        classes: (0..k).map(|i| i.to_string()).collect(),
        l2_normalize: false,
    })
}

impl MulticlassSvm {
    pub fn num_classes(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn scores(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                row: 0,
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok((0..self.num_classes())
            .map(|k| dot(self.w.outer(k), x) + self.b.data()[k])
            .collect())
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, x: &[f32]) -> Result<usize> {
        let s = self.scores(x)?;
        Ok(s.iter()
            .enumerate()
            .fold(0, |best, (k, &v)| if v > s[best] { k } else { best }))
    }

    pub fn predict_set(&self, features: &FeatureSet) -> Result<Vec<usize>> {
        let features = if self.l2_normalize {
            features.l2_normalized()
        } else {
            features.clone()
        };
        if features.dim() != self.dim() {
            return Err(Error::Dimension {
                row: 0,
                expected: self.dim(),
                found: features.dim(),
            });
        }
        (0..features.len()).map(|i| self.predict(features.row(i))).collect()
    }

    pub fn accuracy(&self, features: &FeatureSet) -> Result<f64> {
        if features.is_empty() {
            return Err(Error::Data("cannot score an empty feature set".into()));
        }
        let pred = self.predict_set(features)?;
        let hits = pred.iter().zip(&features.class_ids).filter(|(p, c)| p == c).count();
        Ok(hits as f64 / features.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = SvmMeta {
            trained_c: self.trained_c,
            classes: self.classes.clone(),
            l2_normalize: self.l2_normalize,
        };
        let meta = toml::to_string(&meta).map_err(|e| Error::Config(format!("svm metadata: {e}")))?;
        let mut c = Container::new(SVM_KIND, meta);
        c.push("weight", self.w.clone());
        c.push("bias", self.b.clone());
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let container = Container::read(path)?;
        let format = |detail: String| Error::Format {
            path: path.to_path_buf(),
            what: "svm model",
            detail,
        };
        if container.kind != SVM_KIND {
            return Err(format(format!("container holds a {:?}, not an svm", container.kind)));
        }
        let meta: SvmMeta = toml::from_str(&container.meta).map_err(|e| format(format!("metadata: {e}")))?;
        let mut w = None;
        let mut b = None;
        for (name, t) in container.tensors {
            let t = t
                .into_typed::<f64>()
                .ok_or_else(|| format(format!("{name} is not f64")))?;
            match name.as_str() {
                "weight" => w = Some(t),
                "bias" => b = Some(t),
                other => return Err(format(format!("unexpected tensor {other}"))),
            }
        }
        let w = w.ok_or_else(|| format("missing weight".into()))?;
        let b = b.ok_or_else(|| format("missing bias".into()))?;
        match (w.shape(), b.shape()) {
            (&[k, _], &[kb]) if k == kb && k == meta.classes.len() && k >= 2 => {}
            (ws, bs) => {
                return Err(format(format!(
                    "weight {ws:?}, bias {bs:?} and {} class labels disagree",
                    meta.classes.len()
                )))
            }
        }
        Ok(MulticlassSvm {
            w,
            b,
            trained_c: meta.trained_c,
            classes: meta.classes,
            l2_normalize: meta.l2_normalize,
        })
    }
}
