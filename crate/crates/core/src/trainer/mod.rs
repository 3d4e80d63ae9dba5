//! Mini-batch SGD training of the CNN with on-the-fly augmentation.

mod dataset;
mod eval;
mod optim;

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::{argmax_rows, save_checkpoint, LayerSpec, Model};
use crate::nn::softmax_cross_entropy;
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;

pub use dataset::ImageSet;
pub use eval::{evaluate, Evaluation};
pub use optim::{sgd_momentum_step, zero_velocity};

// Stream tags for derive_seed.
const SHUFFLE: u64 = 1;
const AUGMENT: u64 = 2;
const DROPOUT: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub momentum: f64,
    /// Multiplier applied at each milestone.
    pub lr_decay: f64,
    /// Milestones as fractions of `epochs`.
    pub lr_decay_at: Vec<f64>,
    pub weight_decay: f64,
    pub seed: u64,
    /// 1 runs strictly sequentially; more adds a batch-preparation thread.
    pub threads: usize,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 100,
            lr0: 0.01,
            momentum: 0.9,
            lr_decay: 0.1,
            lr_decay_at: vec![0.5, 0.75],
            weight_decay: 1e-4,
            seed: 0,
            threads: 1,
            eval_batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 {} must be positive", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0,1)", self.momentum));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} outside (0,1]", self.lr_decay));
        }
        if self.lr_decay_at.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("lr_decay_at fractions must lie in [0,1]".into());
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Step schedule: `lr0 * lr_decay^(milestones passed)`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_decay_at
            .iter()
            .filter(|&&f| epoch >= (f * self.epochs as f64).round() as usize)
            .count();
        self.lr0 * self.lr_decay.powi(passed as i32)
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
}

impl RunHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochRecord>, e| match best {
                Some(b) if b.test_acc >= e.test_acc => Some(b),
                _ => Some(e),
            })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
        for e in &self.epochs {
            w.serialize(e).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let epochs = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<EpochRecord>, _>>()
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                what: "history",
                detail: e.to_string(),
            })?;
        Ok(RunHistory { epochs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Where per-epoch artifacts go; `None` fields are skipped.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub dir: Option<PathBuf>,
}

impl RunOutputs {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        RunOutputs { dir: Some(dir.into()) }
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }
}

pub const HISTORY_FILE: &str = "history.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// Train for `cfg.epochs` epochs (or until `observer` stops), evaluating `test` after each.
pub fn train(
    model: &mut Model<f32>,
    train_set: &ImageSet,
    test_set: &ImageSet,
    cfg: &TrainConfig,
    augment: &AugmentConfig,
    outputs: &RunOutputs,
    observer: &mut dyn FnMut(&EpochRecord, &Model<f32>) -> Result<Control>,
) -> Result<RunHistory> {
    cfg.validate()?;
    let [_, h, w] = model.spec().input_shape;
    augment.validate([h, w])?;
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if test_set.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    for set in [train_set, test_set] {
        if set.num_classes > model.num_classes() {
            return Err(Error::Data(format!(
                "data has {} classes, model predicts {}",
                set.num_classes,
                model.num_classes()
            )));
        }
        if let Some(img) = set.images.first() {
            if img.shape() != model.spec().input_shape {
                return Err(Error::Data(format!(
                    "images are {:?}, model expects {:?}",
                    img.shape(),
                    model.spec().input_shape
                )));
            }
        }
    }
    let flat_bn = model
        .spec()
        .layers
        .iter()
        .any(|l| matches!(l, LayerSpec::Dense { batch_norm: true, .. }));
    if flat_bn && cfg.batch_size.min(train_set.len()) < 2 {
        return Err(Error::Config(
            "batch size 1 never updates the dense batch-norm statistics; use at least 2".into(),
        ));
    }
    let augment = (!augment.is_identity([h, w])).then_some(augment);

    let mut velocity = zero_velocity(model.params());
    let mut history = RunHistory::default();
    let mut best_acc = f64::NEG_INFINITY;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.learning_rate(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng_from(derive_seed(cfg.seed, &[SHUFFLE, epoch as u64])));
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let seed_of = move |i: usize| derive_seed(cfg.seed, &[AUGMENT, epoch as u64, i as u64]);
        let n_batches = batches.len();
        let make = |b: usize| train_set.batch(batches[b], augment.map(|a| (a, &seed_of as &dyn Fn(usize) -> u64)));

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut step = |b: usize, x: Tensor<f32>, labels: Vec<usize>| -> Result<()> {
            let (logits, caches) =
                model.forward_train(&x, derive_seed(cfg.seed, &[DROPOUT, epoch as u64, b as u64]))?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, lr });
            }
            loss_sum += loss * labels.len() as f64;
            correct += argmax_rows(&logits).iter().zip(&labels).filter(|(p, t)| p == t).count();
            let grads = model.backward(&grad, caches)?;
            sgd_momentum_step(
                model.params_mut(),
                &grads,
                &mut velocity,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            )
        };

        if cfg.threads > 1 {
            std::thread::scope(|s| -> Result<()> {
                let (tx, rx) = mpsc::sync_channel(cfg.threads);
                let make = &make;
                s.spawn(move || {
                    for b in 0..n_batches {
                        if tx.send(make(b)).is_err() {
                            break;
                        }
                    }
                });
                for b in 0..n_batches {
                    let (x, labels) = rx.recv().map_err(|_| Error::Data("batch producer stopped".into()))??;
                    step(b, x, labels)?;
                }
                Ok(())
            })?;
        } else {
            for b in 0..n_batches {
                let (x, labels) = make(b)?;
                step(b, x, labels)?;
            }
        }

        let eval = evaluate(model, test_set, cfg.eval_batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            test_acc: eval.accuracy,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train {:.4} test {:.4} lr {lr:e} ({:.1}s)",
            record.train_loss,
            record.train_acc,
            record.test_acc,
            record.seconds
        );
        if record.test_acc > best_acc {
            best_acc = record.test_acc;
            if let Some(p) = outputs.path(BEST_CHECKPOINT) {
                save_checkpoint(model, &p)?;
            }
        }
        if let Some(p) = outputs.path(LAST_CHECKPOINT) {
            save_checkpoint(model, &p)?;
        }
        history.epochs.push(record);
        if let Some(p) = outputs.path(HISTORY_FILE) {
            history.write_csv(&p)?;
        }
        if observer(history.epochs.last().unwrap(), model)? == Control::Stop {
            break;
        }
    }
    Ok(history)
}

/// Observer that never stops.
pub fn run_to_completion(_: &EpochRecord, _: &Model<f32>) -> Result<Control> {
    Ok(Control::Continue)
}
