//! Small ensemble statistics shared by the sweeps.

use crate::error::{Error, Result};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard deviation with the `1/n` (population) normalisation.
pub fn population_std(values: &[f64]) -> f64 {
    let mu = mean(values);
    (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Indices of values further than `k` robust standard deviations
/// (`1.4826 · MAD`) from the median. Nothing is flagged when the MAD is zero.
pub fn outliers(values: &[f64], k: f64) -> Vec<usize> {
    if values.len() < 3 {
        return Vec::new();
    }
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let sigma = 1.4826 * median(&dev);
    if sigma == 0.0 {
        return Vec::new();
    }
    dev.iter()
        .enumerate()
        .filter(|(_, &d)| d > k * sigma)
        .map(|(i, _)| i)
        .collect()
}

/// Population standard deviation of `estimates − truth`.
pub fn sample_deviation(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.len() < 2 {
        return Err(Error::param("estimates", "need at least two runs"));
    }
    let errors: Vec<f64> = estimates.iter().map(|e| e - truth).collect();
    Ok(population_std(&errors))
}
