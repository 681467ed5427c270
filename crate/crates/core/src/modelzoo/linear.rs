//! L2-penalized least squares with an unpenalized intercept.
//!
//! Features are standardized before solving, so the penalty applies on a
//! common scale: minimizes `(1/2n)·‖y − Xw − b‖² + (λ/2)·‖D w‖²` where `D`
//! holds the feature standard deviations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }
}

pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], l2_penalty: f64) -> Result<LinearModel, ModelError> {
    let n = y.len();
    let p = x.first().map_or(0, Vec::len);
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let means: Vec<f64> = (0..p)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();
    let sds: Vec<f64> = (0..p)
        .map(|j| (x.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / nf).sqrt())
        .collect();

    // Constant columns carry no signal; without a penalty they make the
    // system singular.
    let active: Vec<usize> = (0..p).filter(|&j| sds[j] > 0.0).collect();
    if l2_penalty == 0.0 && active.len() < p {
        return Err(ModelError::SingularSystem);
    }
    let mut coefficients = vec![0.0; p];
    if !active.is_empty() {
        let z = DMatrix::from_fn(n, active.len(), |i, k| {
            let j = active[k];
            (x[i][j] - means[j]) / sds[j]
        });
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let mut gram = z.transpose() * &z / nf;
        for k in 0..active.len() {
            gram[(k, k)] += l2_penalty;
        }
        let rhs = z.transpose() * yc / nf;
        let chol = gram.cholesky().ok_or(ModelError::SingularSystem)?;
        let diag = chol.l_dirty().diagonal();
        let (dmin, dmax) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
            (lo.min(d.abs()), hi.max(d.abs()))
        });
        if l2_penalty == 0.0 && (dmin * dmin) < 1e-12 * dmax * dmax {
            return Err(ModelError::SingularSystem);
        }
        let beta = chol.solve(&rhs);
        for (k, &j) in active.iter().enumerate() {
            coefficients[j] = beta[k] / sds[j];
        }
    }
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&means)
            .map(|(w, m)| w * m)
            .sum::<f64>();
    Ok(LinearModel {
        coefficients,
        intercept,
    })
}
