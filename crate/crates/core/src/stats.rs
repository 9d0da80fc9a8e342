//! Summation and Monte Carlo summaries.

use serde::{Deserialize, Serialize};

/// Number of batches used by every batch-means confidence interval.
pub const BATCHES: usize = 32;

/// 97.5% quantile of Student's t with `BATCHES - 1` degrees of freedom.
pub const T_QUANTILE_31: f64 = 2.039_513_446_396_408;

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

/// Mean with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error from the spread of batch means.
    pub se: f64,
    /// Half-width of the 95% interval (`t_{31} * se`).
    pub ci95: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            se: 0.0,
            ci95: 0.0,
            samples: 0,
        }
    }
}

/// Batch-means summary of samples kept in index order.
///
/// Samples are split into [`BATCHES`] contiguous batches whose sizes differ
/// by at most one; with fewer samples than batches every sample is a batch.
pub fn batch_means(samples: &[f64]) -> Estimate {
    let n = samples.len();
    if n == 0 {
        return Estimate {
            mean: 0.0,
            se: 0.0,
            ci95: 0.0,
            samples: 0,
        };
    }
    let overall = mean(samples);
    let b = BATCHES.min(n);
    if b < 2 {
        return Estimate {
            mean: overall,
            se: 0.0,
            ci95: 0.0,
            samples: n,
        };
    }
    let base = n / b;
    let extra = n % b;
    let mut start = 0;
    let mut means = Vec::with_capacity(b);
    for i in 0..b {
        let len = base + usize::from(i < extra);
        means.push(mean(&samples[start..start + len]));
        start += len;
    }
    let mut var = CompensatedSum::new();
    for m in &means {
        var.add((m - overall) * (m - overall));
    }
    let var = var.value() / (b as f64 - 1.0);
    let se = (var / b as f64).sqrt();
    let t = if b == BATCHES { T_QUANTILE_31 } else { 1.96 };
    Estimate {
        mean: overall,
        se,
        ci95: t * se,
        samples: n,
    }
}

/// `(E|Y|)^{1/p}` style estimate from samples of `|ΔX|^p`.
///
/// The interval is obtained by mapping the endpoints of the batch-means
/// interval for the mean of the `p`-th powers through `x -> x^{1/p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub ci95: f64,
    /// Standard error of the norm (endpoint map of one power-mean SE).
    pub se: f64,
    pub samples: usize,
}

pub fn lp_norm_from_powers(powers: &[f64], p: f64) -> NormEstimate {
    let est = batch_means(powers);
    let m = est.mean.max(0.0);
    let value = m.powf(1.0 / p);
    let spread = |h: f64| {
        let hi = (m + h).powf(1.0 / p) - value;
        let lo = value - (m - h).max(0.0).powf(1.0 / p);
        hi.max(lo)
    };
    NormEstimate {
        value,
        ci95: spread(est.ci95),
        se: spread(est.se),
        samples: est.samples,
    }
}

/// Ordinary least-squares slope and intercept of `y` on `x`, with the
/// residual root-mean-square.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx = compensated_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    if sxx == 0.0 {
        return None;
    }
    let sxy = compensated_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = compensated_sum(
        x.iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2)),
    );
    Some((slope, intercept, (rss / n as f64).sqrt()))
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut xs = vec![1e16];
        xs.extend(std::iter::repeat_n(1.0, 1000));
        xs.push(-1e16);
        assert_eq!(compensated_sum(xs), 1000.0);
    }

    #[test]
    fn batch_means_constant_has_zero_se() {
        let e = batch_means(&[2.5; 1000]);
        assert_eq!(e.mean, 2.5);
        assert_eq!(e.se, 0.0);
    }

    #[test]
    fn norm_of_zero_samples_is_zero() {
        let e = lp_norm_from_powers(&[0.0; 100], 3.0);
        assert_eq!(e.value, 0.0);
        assert_eq!(e.ci95, 0.0);
    }

    #[test]
    fn fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let (s, c, r) = linear_fit(&x, &y).unwrap();
        assert!((s + 0.5).abs() < 1e-12 && (c - 3.0).abs() < 1e-12 && r < 1e-12);
    }

    #[test]
    fn ks_identical_samples_is_zero() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 1000.0).collect();
        assert_eq!(ks_two_sample(&a, &b), 1.0);
    }
}
