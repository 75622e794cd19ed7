//! Small statistics helpers for suite analyses.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::Error;
use crate::Result;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// One-sided two-sample test of `mean(xs) < mean(ys)` using the Welch
/// statistic with a normal approximation (appropriate for the sample sizes
/// used here). Returns the p-value: small when `xs` is clearly below `ys`.
pub fn welch_one_sided_less(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::EmptyInput("welch test samples"));
    }
    let se = (variance(xs) / xs.len() as f64 + variance(ys) / ys.len() as f64).sqrt();
    if se == 0.0 {
        // Degenerate samples: decide by the means alone.
        return Ok(if mean(xs) < mean(ys) { 0.0 } else { 1.0 });
    }
    let t = (mean(xs) - mean(ys)) / se;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(normal.cdf(t))
}
