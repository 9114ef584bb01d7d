use nalgebra::{DMatrix, DVector};

use super::insufficient;
use crate::error::{Error, Result};

/// Ridge-regularized linear autoregression, forecast recursively.
///
/// `coefs[k]` multiplies lag `k + 1`. The intercept is not penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearArFit {
    pub coefs: Vec<f64>,
    pub intercept: f64,
}

pub fn fit_linear_ar(y: &[f64], lags: usize, ridge: f64) -> Result<LinearArFit> {
    let p = lags.max(1);
    if y.len() < p + 2 {
        return Err(insufficient("LinearAR", y.len(), p + 2));
    }
    let rows = y.len() - p;
    let x = DMatrix::from_fn(rows, p, |r, k| y[r + p - 1 - k]);
    let target = DVector::from_iterator(rows, y[p..].iter().copied());

    let x_mean: Vec<f64> = (0..p).map(|k| x.column(k).mean()).collect();
    let y_mean = target.mean();
    let xc = DMatrix::from_fn(rows, p, |r, k| x[(r, k)] - x_mean[k]);
    let yc = target.add_scalar(-y_mean);

    let gram = xc.transpose() * &xc + DMatrix::identity(p, p) * ridge;
    let rhs = xc.transpose() * yc;
    let beta = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("LinearAR normal equations are not positive definite".into()))?
        .solve(&rhs);

    let coefs: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - coefs.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok(LinearArFit { coefs, intercept })
}

impl LinearArFit {
    fn predict_next(&self, recent: &[f64]) -> f64 {
        // `recent` ends with the latest observation.
        let n = recent.len();
        self.intercept
            + self
                .coefs
                .iter()
                .enumerate()
                .map(|(k, b)| b * recent[n - 1 - k])
                .sum::<f64>()
    }

    pub fn point_path(&self, y: &[f64], horizon: usize) -> Result<Vec<f64>> {
        let p = self.coefs.len();
        if y.len() < p {
            return Err(insufficient("LinearAR", y.len(), p));
        }
        let mut buf: Vec<f64> = y[y.len() - p..].to_vec();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let next = self.predict_next(&buf);
            out.push(next);
            buf.push(next);
        }
        Ok(out)
    }

    pub fn residuals(&self, y: &[f64]) -> Vec<f64> {
        let p = self.coefs.len();
        (p..y.len()).map(|t| y[t] - self.predict_next(&y[t - p..t])).collect()
    }
}
