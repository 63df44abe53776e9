//! Frechet distance between Gaussian moment pairs.
//!
//! `fid = |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))`, with the matrix
//! square root taken through the symmetric product `S1^(1/2) S2 S1^(1/2)`.
//! Small negative eigenvalues from sampling noise are clamped at zero; if the
//! product is numerically non-PSD beyond that, 1e-6 jitter is added to its
//! diagonal. Handling this identically across implementations is what keeps
//! reported numbers comparable.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::EvalError;
use crate::eval::stats::FeatureStats;

const JITTER: f64 = 1e-6;
const NEG_EIG_TOLERANCE: f64 = -1e-6;

/// Symmetric PSD square root via eigendecomposition, clamping small negative
/// eigenvalues at zero.
fn sqrt_psd(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>, EvalError> {
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Trace of `(S1 S2)^(1/2)` via the symmetrized product.
fn trace_sqrt_product(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<f64, EvalError> {
    let root1 = sqrt_psd(s1)?;
    let product = &root1 * s2 * &root1;
    let sym = (&product + product.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().cloned().fold(1.0f64, f64::max);
    if eig.eigenvalues.iter().any(|&l| l < NEG_EIG_TOLERANCE * scale) {
        // Numerically non-PSD: retry with diagonal jitter.
        let d = s1.nrows();
        let jittered = &root1 * s2 * &root1 + DMatrix::<f64>::identity(d, d) * JITTER;
        let sym = (&jittered + jittered.transpose()) * 0.5;
        eig = SymmetricEigen::new(sym);
    }
    Ok(eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum())
}

/// Frechet distance between two feature distributions.
pub fn fid(stats_real: &FeatureStats, stats_gen: &FeatureStats) -> Result<f64, EvalError> {
    if stats_real.d_feat() != stats_gen.d_feat() {
        return Err(EvalError::DimMismatch {
            a: stats_real.d_feat(),
            b: stats_gen.d_feat(),
        });
    }
    let mean_diff = stats_real.mean() - stats_gen.mean();
    let mean_term = mean_diff.dot(&mean_diff);
    let tr_sqrt = trace_sqrt_product(stats_real.cov(), stats_gen.cov())?;
    let raw = mean_term + stats_real.cov().trace() + stats_gen.cov().trace() - 2.0 * tr_sqrt;
    if !raw.is_finite() {
        return Err(EvalError::Eigen(format!("non-finite distance {raw}")));
    }
    debug_assert!(raw >= -1e-6, "distance {raw} below the numeric floor");
    Ok(raw.max(0.0))
}
