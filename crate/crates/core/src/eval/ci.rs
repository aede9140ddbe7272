use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Two-sided 97.5% standard-normal quantile.
pub const Z_95: f64 = 1.959964;

/// Per-query metric values with their mean and 95% interval half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub per_query: Vec<f64>,
    pub mean: f64,
    pub ci_half_width: f64,
    pub n_queries: usize,
}

impl MetricResult {
    pub fn ci_low(&self) -> f64 {
        self.mean - self.ci_half_width
    }

    pub fn ci_high(&self) -> f64 {
        self.mean + self.ci_half_width
    }

    /// Whether the two intervals share no point.
    pub fn disjoint_from(&self, other: &MetricResult) -> bool {
        self.ci_low() > other.ci_high() || other.ci_low() > self.ci_high()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// Mean plus or minus `z * s / sqrt(n)`.
    #[default]
    Normal,
    /// Percentile bootstrap, 2000 resamples; reported as a symmetric
    /// half-width around the sample mean (the larger of the two sides).
    Bootstrap,
}

/// Normal-approximation interval with the sample standard deviation (n - 1).
pub fn mean_with_ci(values: &[f64]) -> Result<MetricResult> {
    if values.len() < 2 {
        return Err(Error::validation(format!(
            "a confidence interval needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(MetricResult {
        per_query: values.to_vec(),
        mean,
        ci_half_width: Z_95 * var.sqrt() / n.sqrt(),
        n_queries: values.len(),
    })
}

pub fn bootstrap_ci(values: &[f64], resamples: usize, seed: u64) -> Result<MetricResult> {
    let mut result = mean_with_ci(values)?;
    let mut rng = seed::rng_for(seed, "bootstrap");
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let lo = means[((0.025 * resamples as f64).floor() as usize).min(resamples - 1)];
    let hi = means[((0.975 * resamples as f64).ceil() as usize).min(resamples - 1)];
    result.ci_half_width = (result.mean - lo).max(hi - result.mean).max(0.0);
    Ok(result)
}

impl CiMethod {
    pub fn summarize(self, values: &[f64], seed: u64) -> Result<MetricResult> {
        match self {
            CiMethod::Normal => mean_with_ci(values),
            CiMethod::Bootstrap => bootstrap_ci(values, 2000, seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_values_have_zero_width() {
        let r = mean_with_ci(&[0.4; 10]).unwrap();
        assert!(r.ci_half_width.abs() < 1e-15);
        assert!((r.mean - 0.4).abs() < 1e-15);
    }

    #[test]
    fn balanced_binary_half_width() {
        let values: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        let r = mean_with_ci(&values).unwrap();
        assert!((r.ci_half_width - 0.09849).abs() < 1e-5, "{}", r.ci_half_width);
        assert_eq!(r.mean, 0.5);
    }

    #[test]
    fn scaling_scales_mean_and_width() {
        let v = [0.1, 0.7, 0.3, 0.9, 0.2];
        let a = mean_with_ci(&v).unwrap();
        let doubled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let b = mean_with_ci(&doubled).unwrap();
        assert!((b.mean - 2.0 * a.mean).abs() < 1e-12);
        assert!((b.ci_half_width - 2.0 * a.ci_half_width).abs() < 1e-12);
    }

    #[test]
    fn too_few_values() {
        assert!(matches!(mean_with_ci(&[1.0]), Err(Error::Validation(_))));
    }

    #[test]
    fn bootstrap_is_close_to_normal_on_large_samples() {
        let values: Vec<f64> = (0..400).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        let n = mean_with_ci(&values).unwrap();
        let b = bootstrap_ci(&values, 2000, 3).unwrap();
        assert!((n.ci_half_width - b.ci_half_width).abs() < 0.2 * n.ci_half_width);
        assert_eq!(b, bootstrap_ci(&values, 2000, 3).unwrap());
    }
}
