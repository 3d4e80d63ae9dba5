//! Binary soft-margin SVM trained by stochastic subgradient descent on the primal.
//!
//! Objective: `0.5*|w|^2 + C * sum_i max(0, 1 - y_i (w.x_i + b))`. Each step
//! works on the per-sample scaled form `lambda/2 |w|^2 + hinge_i` with
//! `lambda = 1/(C M)` and step `eta_t = eta0 / (1 + lambda eta0 t)`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverControls {
    pub max_epochs: usize,
    /// Stop once an epoch lowers the best objective by less than this fraction.
    pub tolerance: f64,
    /// Initial step; `None` picks `1 / (1 + max |x|^2)`.
    pub eta0: Option<f64>,
    pub seed: u64,
}

impl Default for SolverControls {
    fn default() -> Self {
        SolverControls {
            max_epochs: 500,
            tolerance: 1e-7,
            eta0: None,
            seed: 0,
        }
    }
}

impl SolverControls {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("svm max_epochs must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::Config(format!("svm tolerance {} must be >= 0", self.tolerance)));
        }
        if let Some(e) = self.eta0 {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("svm eta0 {e} must be positive")));
            }
        }
        Ok(())
    }
}

/// Row-major design matrix view.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub dim: usize,
}

impl<'a> Samples<'a> {
    pub fn new(data: &'a [f32], rows: usize, dim: usize) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::shape(
                "svm",
                "samples",
                format!("{} values for {rows}x{dim}", data.len()),
            ));
        }
        Ok(Samples { data, rows, dim })
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub w: Vec<f64>,
    pub b: f64,
    pub objective: f64,
    /// Best objective after each epoch; non-increasing by construction.
    pub history: Vec<f64>,
    pub epochs: usize,
}

pub fn dot(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| a * b as f64).sum()
}

pub fn hinge_loss(x: &Samples<'_>, y: &[f64], w: &[f64], b: f64) -> f64 {
    (0..x.rows)
        .map(|i| (1.0 - y[i] * (dot(w, x.row(i)) + b)).max(0.0))
        .sum()
}

pub fn primal_objective(x: &Samples<'_>, y: &[f64], w: &[f64], b: f64, c: f64) -> f64 {
    0.5 * w.iter().map(|v| v * v).sum::<f64>() + c * hinge_loss(x, y, w, b)
}

pub fn train_binary(x: &Samples<'_>, y: &[f64], c: f64, controls: &SolverControls) -> Result<BinarySolution> {
    controls.validate()?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("C = {c} must be positive")));
    }
    if y.len() != x.rows {
        return Err(Error::Data(format!("{} samples but {} labels", x.rows, y.len())));
    }
    if x.rows < 2 {
        return Err(Error::Data("binary SVM needs at least two samples".into()));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::Data(format!("binary label {bad} is not +1 or -1")));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::Data("binary SVM needs both +1 and -1 labels".into()));
    }

    let (m, d) = (x.rows, x.dim);
    let lambda = 1.0 / (c * m as f64);
    let eta0 = controls.eta0.unwrap_or_else(|| {
        let max_sq = (0..m)
            .map(|i| x.row(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>())
            .fold(0.0, f64::max);
        1.0 / (1.0 + max_sq)
    });

    let mut rng = rng_from(controls.seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut w = vec![0.0f64; d];
    let mut b = 0.0f64;
    let mut avg_w = vec![0.0f64; d];
    let mut avg_b;
    let mut best = (w.clone(), b, primal_objective(x, y, &w, b, c));
    let mut history = Vec::new();
    let mut t = 0u64;
    let mut epochs = 0;

    for _ in 0..controls.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        avg_w.iter_mut().for_each(|v| *v = 0.0);
        avg_b = 0.0;
        for (n, &i) in order.iter().enumerate() {
            let eta = eta0 / (1.0 + lambda * eta0 * t as f64);
            t += 1;
            let row = x.row(i);
            let margin = y[i] * (dot(&w, row) + b);
            let shrink = 1.0 - eta * lambda;
            if margin < 1.0 {
                let step = eta * y[i];
                for (wj, &xj) in w.iter_mut().zip(row) {
                    *wj = *wj * shrink + step * xj as f64;
                }
                b += step;
            } else {
                w.iter_mut().for_each(|wj| *wj *= shrink);
            }
            // running mean of this epoch's iterates
            let k = 1.0 / (n + 1) as f64;
            for (a, &wj) in avg_w.iter_mut().zip(&w) {
                *a += (wj - *a) * k;
            }
            avg_b += (b - avg_b) * k;
        }

        let previous = best.2;
        for (cw, cb) in [(&w, b), (&avg_w, avg_b)] {
            let obj = primal_objective(x, y, cw, cb, c);
            if !obj.is_finite() {
                return Err(Error::Numerical(format!(
                    "SVM objective became {obj} at epoch {epochs}"
                )));
            }
            if obj < best.2 {
                best = (cw.clone(), cb, obj);
            }
        }
        history.push(best.2);
        let decrease = (previous - best.2) / previous.max(f64::MIN_POSITIVE);
        if decrease > 0.0 && decrease < controls.tolerance {
            break;
        }
    }
    let (w, b, objective) = best;
    Ok(BinarySolution {
        w,
        b,
        objective,
        history,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn controls(epochs: usize) -> SolverControls {
        SolverControls {
            max_epochs: epochs,
            tolerance: 0.0,
            ..SolverControls::default()
        }
    }

    #[test]
    fn two_point_max_margin() {
        let data = [2.0f32, 0.0, -2.0, 0.0];
        let x = Samples::new(&data, 2, 2).unwrap();
        let sol = train_binary(&x, &[1.0, -1.0], 10.0, &controls(3000)).unwrap();
        assert!((sol.w[0] - 0.5).abs() < 0.01, "{:?}", sol.w);
        assert!(sol.w[1].abs() < 0.01);
        assert!(sol.b.abs() < 0.01, "{}", sol.b);
        assert!((sol.objective - 0.125).abs() < 0.0025, "{}", sol.objective);
    }

    #[test]
    fn logged_objective_never_increases() {
        let data = [1.0f32, 2.0, -1.0, 0.5, 0.3, -2.0, -0.7, -0.1, 2.0, 1.0];
        let x = Samples::new(&data, 5, 2).unwrap();
        let sol = train_binary(&x, &[1.0, 1.0, -1.0, -1.0, 1.0], 2.0, &controls(50)).unwrap();
        assert!(sol.history.windows(2).all(|p| p[1] <= p[0] + 1e-9));
    }

    #[test]
    fn single_label_is_rejected() {
        let data = [1.0f32, 2.0];
        let x = Samples::new(&data, 2, 1).unwrap();
        assert!(train_binary(&x, &[1.0, 1.0], 1.0, &controls(1)).is_err());
    }
}
