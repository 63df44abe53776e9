//! Kernel distance: the unbiased squared-MMD estimator with the cubic
//! polynomial kernel `k(x, y) = (x.y / d + 1)^3`, averaged over seeded
//! subsets.
//!
//! Feature sets are canonically sorted before index draws, so the estimate is
//! invariant under permutation of either input set.

use rand::Rng;

use crate::error::EvalError;
use crate::rng::rng_for;

pub const DEFAULT_SUBSET_SIZE: usize = 100;
pub const DEFAULT_N_SUBSETS: usize = 100;

#[derive(Debug, Clone)]
pub struct KidOutcome {
    pub mean: f64,
    pub subset_estimates: Vec<f64>,
}

impl KidOutcome {
    /// Standard error of the subset estimates around their mean.
    pub fn std_error(&self) -> f64 {
        let n = self.subset_estimates.len();
        if n < 2 {
            return f64::INFINITY;
        }
        let var: f64 = self
            .subset_estimates
            .iter()
            .map(|&v| (v - self.mean) * (v - self.mean))
            .sum::<f64>()
            / (n - 1) as f64;
        (var / n as f64).sqrt()
    }
}

fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(&a, &b)| a * b).sum();
    let base = dot / d + 1.0;
    base * base * base
}

/// Unbiased squared MMD on one subset pair.
fn mmd2_unbiased(xs: &[&Vec<f64>], ys: &[&Vec<f64>]) -> f64 {
    let m = xs.len() as f64;
    let mut sum_xx = 0.0;
    let mut sum_yy = 0.0;
    for i in 0..xs.len() {
        for j in 0..xs.len() {
            if i != j {
                sum_xx += poly_kernel(xs[i], xs[j]);
                sum_yy += poly_kernel(ys[i], ys[j]);
            }
        }
    }
    let mut sum_xy = 0.0;
    for x in xs {
        for y in ys {
            sum_xy += poly_kernel(x, y);
        }
    }
    sum_xx / (m * (m - 1.0)) + sum_yy / (m * (m - 1.0)) - 2.0 * sum_xy / (m * m)
}

fn canonical_sort(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut sorted = features.to_vec();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    sorted
}

/// Sample `k` distinct indices from `0..n` by partial Fisher-Yates.
fn sample_indices(rng: &mut rand_chacha::ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Mean unbiased MMD^2 over seeded subsets, with the per-subset estimates.
pub fn kid_detailed(
    features_real: &[Vec<f64>],
    features_gen: &[Vec<f64>],
    subset_size: usize,
    n_subsets: usize,
    seed: u64,
) -> Result<KidOutcome, EvalError> {
    if subset_size < 2 {
        return Err(EvalError::TooFewSamples {
            needed: 2,
            got: subset_size,
            context: "kid subset size".to_string(),
        });
    }
    for (set, name) in [(features_real, "real"), (features_gen, "generated")] {
        if set.len() < subset_size {
            return Err(EvalError::TooFewSamples {
                needed: subset_size,
                got: set.len(),
                context: format!("kid {name} feature set"),
            });
        }
    }
    let d = features_real[0].len();
    for row in features_real.iter().chain(features_gen.iter()) {
        if row.len() != d {
            return Err(EvalError::DimMismatch { a: d, b: row.len() });
        }
    }
    let real = canonical_sort(features_real);
    let generated = canonical_sort(features_gen);
    let mut rng = rng_for(seed, &["kid"]);
    let mut estimates = Vec::with_capacity(n_subsets);
    for _ in 0..n_subsets {
        let xi = sample_indices(&mut rng, real.len(), subset_size);
        let yi = sample_indices(&mut rng, generated.len(), subset_size);
        let xs: Vec<&Vec<f64>> = xi.iter().map(|&i| &real[i]).collect();
        let ys: Vec<&Vec<f64>> = yi.iter().map(|&i| &generated[i]).collect();
        estimates.push(mmd2_unbiased(&xs, &ys));
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    Ok(KidOutcome {
        mean,
        subset_estimates: estimates,
    })
}

/// Mean unbiased MMD^2 over seeded subsets.
pub fn kid(
    features_real: &[Vec<f64>],
    features_gen: &[Vec<f64>],
    subset_size: usize,
    n_subsets: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    Ok(kid_detailed(features_real, features_gen, subset_size, n_subsets, seed)?.mean)
}
