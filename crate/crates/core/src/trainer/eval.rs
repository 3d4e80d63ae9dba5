use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::trainer::dataset::ImageSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("cannot evaluate an empty split".into()));
        }
        if labels.len() != predictions.len() {
            return Err(Error::Data(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&t, &p) in labels.iter().zip(predictions) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::Data(format!("class {} outside {num_classes}", t.max(p))));
            }
            confusion[t][p] += 1;
        }
        let hits: usize = (0..num_classes).map(|k| confusion[k][k]).sum();
        Ok(Evaluation {
            accuracy: hits as f64 / labels.len() as f64,
            confusion,
        })
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn write_confusion_csv(&self, path: &Path) -> Result<()> {
        let k = self.confusion.len();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
        let mut header = vec!["true\\predicted".to_string()];
        header.extend((0..k).map(|c| c.to_string()));
        w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
        for (t, row) in self.confusion.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Inference-mode accuracy and confusion over `set`, without augmentation.
pub fn evaluate(model: &Model<f32>, set: &ImageSet, batch_size: usize) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    if set.num_classes > model.num_classes() {
        return Err(Error::Data(format!(
            "data has {} classes, model predicts {}",
            set.num_classes,
            model.num_classes()
        )));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut predictions = Vec::with_capacity(set.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = set.batch(chunk, None)?;
        predictions.extend(model.predict(&x)?);
    }
    Evaluation::from_predictions(&set.labels, &predictions, model.num_classes())
}
