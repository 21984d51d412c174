//! Small vector helpers shared across the crate. Everything operates on
//! plain `&[f64]` slices; dimensions here are tiny (toy tasks), so no BLAS.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

pub fn check_same_dim(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// `a*x + b*y`, elementwise.
pub fn linear2(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(xi, yi)| a * xi + b * yi).collect()
}

/// `a*x + b*y + c*z`, elementwise.
pub fn linear3(a: f64, x: &[f64], b: f64, y: &[f64], c: f64, z: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), y.len());
    debug_assert_eq!(x.len(), z.len());
    x.iter()
        .zip(y)
        .zip(z)
        .map(|((xi, yi), zi)| a * xi + b * yi + c * zi)
        .collect()
}

pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    linear2(1.0, x, -1.0, y)
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dist2(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Draw a standard normal vector of dimension `d`.
pub fn standard_normal_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Per-coordinate mean of a sample set.
pub fn sample_mean(samples: &[Vec<f64>]) -> Vec<f64> {
    let n = samples.len();
    assert!(n > 0, "empty sample set");
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    mean
}

/// Unbiased sample covariance matrix (row-major `d x d`).
pub fn sample_covariance(samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = samples.len();
    assert!(n > 1, "covariance needs at least two samples");
    let mean = sample_mean(samples);
    let d = mean.len();
    let mut cov = vec![vec![0.0; d]; d];
    for s in samples {
        let c = sub(s, &mean);
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += c[i] * c[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    cov
}

/// Frobenius norm of the difference to an isotropic target `var * I`,
/// relative to the Frobenius norm of the target.
pub fn cov_frobenius_rel_err(cov: &[Vec<f64>], var: f64) -> f64 {
    let d = cov.len();
    let mut num = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { var } else { 0.0 };
            num += (cov[i][j] - target) * (cov[i][j] - target);
        }
    }
    num.sqrt() / (var * (d as f64).sqrt())
}
