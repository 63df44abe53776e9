//! Gaussian moment estimates (mean, covariance) underlying FID.

use nalgebra::{DMatrix, DVector};

use crate::error::EvalError;

/// Sample mean and unbiased covariance of a feature set.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    n: usize,
}

impl FeatureStats {
    /// Estimates moments from feature rows; needs at least two samples.
    pub fn from_features(rows: &[Vec<f64>]) -> Result<Self, EvalError> {
        if rows.len() < 2 {
            return Err(EvalError::TooFewSamples {
                needed: 2,
                got: rows.len(),
                context: "covariance estimation".to_string(),
            });
        }
        let d = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(EvalError::DimMismatch { a: d, b: bad.len() });
        }
        let n = rows.len();
        let mut mean = DVector::zeros(d);
        for row in rows {
            for (i, &v) in row.iter().enumerate() {
                mean[i] += v;
            }
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for row in rows {
            for i in 0..d {
                let di = row[i] - mean[i];
                for j in i..d {
                    cov[(i, j)] += di * (row[j] - mean[j]);
                }
            }
        }
        cov /= (n - 1) as f64;
        // Mirror the upper triangle; symmetric by construction.
        for i in 0..d {
            for j in 0..i {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        Ok(Self { mean, cov, n })
    }

    /// Builds stats from known moments (analytic oracles in tests).
    pub fn from_moments(mean: DVector<f64>, cov: DMatrix<f64>, n: usize) -> Result<Self, EvalError> {
        if n < 2 {
            return Err(EvalError::TooFewSamples {
                needed: 2,
                got: n,
                context: "moment construction".to_string(),
            });
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-8 {
            return Err(EvalError::Eigen(format!(
                "covariance is not symmetric (max asymmetry {asym})"
            )));
        }
        Ok(Self { mean, cov, n })
    }

    pub fn d_feat(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn n(&self) -> usize {
        self.n
    }
}
