use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSet;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::svm::ovr::{class_count, train_ovr, MulticlassSvm};
use crate::svm::solver::SolverControls;

pub const DEFAULT_FOLDS: usize = 5;

/// `2^-10, 2^-8, ..., 2^10`.
pub fn default_grid() -> Vec<f64> {
    (-5..=5).map(|e| 2f64.powi(2 * e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    /// Used when `grid_search` is off.
    pub c: f64,
    pub grid_search: bool,
    pub grid: Vec<f64>,
    pub folds: usize,
    pub l2_normalize: bool,
    pub solver: SolverControls,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            grid_search: true,
            grid: default_grid(),
            folds: DEFAULT_FOLDS,
            l2_normalize: false,
            solver: SolverControls::default(),
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("svm C = {} must be positive", self.c)));
        }
        validate_grid(&self.grid)?;
        if self.folds < 2 {
            return Err(Error::Config(format!("svm folds = {} must be at least 2", self.folds)));
        }
        self.solver.validate()
    }
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("svm C grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::Config(format!("svm C grid value {bad} must be positive")));
    }
    if grid.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Config("svm C grid must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRow {
    #[serde(rename = "C")]
    pub c: f64,
    pub fold: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best_c: f64,
    pub best_accuracy: f64,
    /// `(C, mean validation accuracy)` in grid order.
    pub means: Vec<(f64, f64)>,
    pub table: Vec<CvRow>,
}

/// Fold index per sample. Each class is shuffled and dealt round-robin, with
/// the dealing position carried across classes so fold sizes also stay within one.
pub fn stratified_folds(class_ids: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let k = class_ids.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in class_ids.iter().enumerate() {
        members[c].push(i);
    }
    let mut assignment = vec![0usize; class_ids.len()];
    let mut next = 0usize;
    for (class, idx) in members.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < folds {
            return Err(Error::Data(format!(
                "class {class} has {} samples, fewer than the {folds} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng_from(derive_seed(seed, &[class as u64])));
        for &i in idx.iter() {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

pub fn grid_search_cv(
    features: &FeatureSet,
    grid: &[f64],
    folds: usize,
    controls: &SolverControls,
) -> Result<CvResult> {
    validate_grid(grid)?;
    class_count(features)?;
    let assignment = stratified_folds(&features.class_ids, folds, derive_seed(controls.seed, &[0xCF]))?;
    let mut table = Vec::new();
    let mut means = Vec::new();
    for (gi, &c) in grid.iter().enumerate() {
        let mut total = 0.0;
        for fold in 0..folds {
            let (train_idx, val_idx): (Vec<usize>, Vec<usize>) =
                (0..features.len()).partition(|&i| assignment[i] != fold);
            let ctl = SolverControls {
                seed: derive_seed(controls.seed, &[gi as u64, fold as u64]),
                ..controls.clone()
            };
            let model: MulticlassSvm = train_ovr(&features.subset(&train_idx), c, &ctl)?;
            let accuracy = model.accuracy(&features.subset(&val_idx))?;
            log::info!("C={c:e} fold {fold}: accuracy {accuracy:.4}");
            table.push(CvRow { c, fold, accuracy });
            total += accuracy;
        }
        means.push((c, total / folds as f64));
    }
    let (best_c, best_accuracy) =
        means.iter().copied().fold(
            (grid[0], f64::NEG_INFINITY),
            |best, (c, acc)| if acc > best.1 { (c, acc) } else { best },
        );
    Ok(CvResult {
        best_c,
        best_accuracy,
        means,
        table,
    })
}

/// Select C (by cross-validation when enabled) and train the final model on all of `features`.
pub fn fit_svm(features: &FeatureSet, cfg: &SvmConfig) -> Result<(MulticlassSvm, Option<CvResult>)> {
    cfg.validate()?;
    let normalized;
    let features = if cfg.l2_normalize {
        normalized = features.l2_normalized();
        &normalized
    } else {
        features
    };
    let cv = if cfg.grid_search {
        Some(grid_search_cv(features, &cfg.grid, cfg.folds, &cfg.solver)?)
    } else {
        None
    };
    let c = cv.as_ref().map_or(cfg.c, |r| r.best_c);
    let mut model = train_ovr(features, c, &cfg.solver)?;
    model.l2_normalize = cfg.l2_normalize;
    Ok((model, cv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_spans_powers_of_four() {
        let g = default_grid();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 2f64.powi(-10));
        assert_eq!(g[10], 1024.0);
        assert!(validate_grid(&g).is_ok());
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[]).is_err());
        assert!(validate_grid(&[1.0, 1.0]).is_err());
        assert!(validate_grid(&[2.0, 1.0]).is_err());
        assert!(validate_grid(&[-1.0]).is_err());
    }

    #[test]
    fn folds_partition_and_stratify() {
        let labels: Vec<usize> = (0..53).map(|i| i % 3).collect();
        let a = stratified_folds(&labels, 5, 9).unwrap();
        for class in 0..3 {
            let mut sizes = [0usize; 5];
            for (i, &f) in a.iter().enumerate() {
                if labels[i] == class {
                    sizes[f] += 1;
                }
            }
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        let mut total = [0usize; 5];
        a.iter().for_each(|&f| total[f] += 1);
        assert_eq!(total.iter().sum::<usize>(), 53);
        assert!(total.iter().max().unwrap() - total.iter().min().unwrap() <= 1);
    }

    #[test]
    fn small_class_is_rejected() {
        assert!(stratified_folds(&[0, 0, 0, 0, 0, 1, 1], 5, 0).is_err());
    }
}
