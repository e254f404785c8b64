//! Monte-Carlo estimates and their error bars.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    Mcmc,
    MonteCarlo,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub method: EstimateMethod,
}

impl Estimate {
    pub fn exact(value: f64, method: EstimateMethod) -> Self {
        Self {
            value,
            stderr: 0.0,
            n_samples: 0,
            seed: 0,
            method,
        }
    }

    /// Number of standard errors separating `self` from `reference`; when
    /// both error bars are zero this is zero for equal values and infinite
    /// otherwise.
    pub fn z_score(&self, reference: f64, reference_stderr: f64) -> f64 {
        let se = (self.stderr * self.stderr + reference_stderr * reference_stderr).sqrt();
        let diff = (self.value - reference).abs();
        if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and standard error for independent samples.
pub fn iid_mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Batch-means estimate of the mean of a correlated series: the series is cut
/// into `n_batches` contiguous blocks and the spread of the block means gives
/// the standard error. Trailing samples that do not fill a block are dropped
/// from the error estimate but kept in the mean.
pub fn batch_means(xs: &[f64], n_batches: usize) -> (f64, f64) {
    let m = mean(xs);
    let n_batches = n_batches.max(2);
    let len = xs.len() / n_batches;
    if len == 0 {
        return iid_mean_stderr(xs);
    }
    let batch: Vec<f64> = xs.chunks_exact(len).take(n_batches).map(mean).collect();
    let bm = mean(&batch);
    let var = batch.iter().map(|b| (b - bm) * (b - bm)).sum::<f64>() / (n_batches - 1) as f64;
    (m, (var / n_batches as f64).sqrt())
}

/// Integrated autocorrelation time with Sokal's self-consistent window
/// (`c = 5`).
pub fn integrated_autocorrelation_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return 1.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n / 2 {
        let c: f64 = xs[..n - lag]
            .iter()
            .zip(&xs[lag..])
            .map(|(a, b)| (a - m) * (b - m))
            .sum::<f64>()
            / ((n - lag) as f64 * var);
        tau += 2.0 * c;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_has_zero_error() {
        let xs = vec![2.5; 1000];
        assert_eq!(batch_means(&xs, 50), (2.5, 0.0));
        assert_eq!(iid_mean_stderr(&xs), (2.5, 0.0));
    }

    #[test]
    fn batch_means_matches_iid_error_for_white_noise() {
        // deterministic pseudo-noise from a simple LCG
        let mut s: u64 = 12345;
        let xs: Vec<f64> = (0..100_000)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let (_, se_iid) = iid_mean_stderr(&xs);
        let (_, se_bm) = batch_means(&xs, 50);
        assert!((se_bm / se_iid - 1.0).abs() < 0.35, "{se_bm} vs {se_iid}");
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 4.0 * v - 1.0).collect();
        let (m, b) = linear_fit(&x, &y);
        assert!((m - 4.0).abs() < 1e-12 && (b + 1.0).abs() < 1e-12);
    }

    #[test]
    fn z_score_conventions() {
        let e = Estimate::exact(1.0, EstimateMethod::Quadrature);
        assert_eq!(e.z_score(1.0, 0.0), 0.0);
        assert!(e.z_score(2.0, 0.0).is_infinite());
    }
}
