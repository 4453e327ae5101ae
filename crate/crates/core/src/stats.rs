//! Small statistical helpers shared by the estimators.

use crate::rng::{derive_stream, uniform};

/// A Monte Carlo point estimate with its standard error and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateWithCI {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl EstimateWithCI {
    /// Mean and `sd/√n` of `samples`.
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let (value, var) = mean_var(samples);
        let n = samples.len();
        EstimateWithCI { value, stderr: (var / n as f64).sqrt(), n_samples: n, seed }
    }

    /// `|value − target| ≤ k·stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }
}

/// Sample mean and unbiased sample variance (0 for fewer than two samples).
///
/// Summation runs in slice order, so results are bit-reproducible for a
/// given input ordering.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1) as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Ordinary least squares fit `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub n: usize,
}

impl LinearFit {
    /// Two-sided 95% interval for the slope (normal quantile for n > 30,
    /// Student t otherwise).
    pub fn slope_ci95(&self) -> (f64, f64) {
        let q = t_quantile_975(self.n.saturating_sub(2));
        (self.slope - q * self.slope_stderr, self.slope + q * self.slope_stderr)
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_stderr = if n > 2 { (rss / (n - 2) as f64 / sxx).sqrt() } else { f64::INFINITY };
    LinearFit { slope, intercept, slope_stderr, n }
}

fn t_quantile_975(dof: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131,
        2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match dof {
        0 => f64::INFINITY,
        1..=30 => TABLE[dof - 1],
        _ => 1.96,
    }
}

/// Bootstrap standard error of `stat` over resamples of `xs` with
/// replacement, using stream `(seed, 0)` for the resampling indices.
pub fn bootstrap_stderr(xs: &[f64], resamples: usize, seed: u64, stat: impl Fn(&[f64]) -> f64) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mut rng = derive_stream(seed, 0);
    let mut buf = vec![0.0; n];
    let values: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[((uniform(&mut rng) * n as f64) as usize).min(n - 1)];
            }
            stat(&buf)
        })
        .collect();
    mean_var(&values).1.sqrt()
}

/// Binomial standard error `√(p(1−p)/n)`.
pub fn binomial_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let fit = linear_fit(&x, &y);
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
        assert!(fit.slope_stderr < 1e-12);
    }

    #[test]
    fn mean_var_small() {
        assert_eq!(mean_var(&[1.0, 2.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_var(&[5.0]).1, 0.0);
    }

    #[test]
    fn bootstrap_of_mean_matches_formula() {
        let xs: Vec<f64> = (0..400).map(|i| ((i * 37) % 101) as f64).collect();
        let (_, var) = mean_var(&xs);
        let formula = (var / xs.len() as f64).sqrt();
        let boot = bootstrap_stderr(&xs, 400, 3, mean);
        assert!((boot / formula - 1.0).abs() < 0.15, "{boot} vs {formula}");
    }
}
