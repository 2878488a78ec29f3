// SPDX-License-Identifier: Apache-2.0

//! Latency distribution summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Summary of a latency distribution, all times in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub min: u64,
    pub mean: f64,
    pub p95: u64,
    pub p99: u64,
    pub max: u64,
    /// Population standard deviation.
    pub std: f64,
    pub n: u64,
    pub delivery_ratio: f64,
}

impl LatencyStats {
    pub fn with_delivery(mut self, ratio: f64) -> Self {
        self.delivery_ratio = ratio;
        self
    }
}

/// Nearest-rank percentile of ascending `sorted`: the value at 1-based rank
/// `ceil(percent / 100 * n)`.
pub fn nearest_rank(sorted: &[u64], percent: u32) -> u64 {
    let n = sorted.len() as u64;
    let rank = (u64::from(percent) * n).div_ceil(100).max(1);
    sorted[(rank - 1) as usize]
}

/// Min, mean, nearest-rank p95/p99, max and population standard deviation.
///
/// Sums are kept in exact integer arithmetic; the only rounding is the
/// final conversion to `f64`. `delivery_ratio` starts at 1 and is filled in
/// by the caller.
pub fn compute_stats(samples: &[u64]) -> Result<LatencyStats> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as u128;
    let (sum, sum_sq) = sorted.iter().fold((0u128, 0u128), |(s, q), &x| {
        let x = u128::from(x);
        (s + x, q + x * x)
    });
    // n² · variance, exact.
    let scaled_var = n * sum_sq - sum * sum;
    let n_f = n as f64;
    Ok(LatencyStats {
        min: sorted[0],
        mean: sum as f64 / n_f,
        p95: nearest_rank(&sorted, 95),
        p99: nearest_rank(&sorted, 99),
        max: sorted[sorted.len() - 1],
        std: (scaled_var as f64 / (n_f * n_f)).sqrt(),
        n: n as u64,
        delivery_ratio: 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Two-sided 95% Student-t interval for the mean of `values`.
pub fn ci95(values: &[f64]) -> Result<Interval> {
    let n = values.len();
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(Interval { lo: mean, hi: mean });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Model(e.to_string()))?
        .inverse_cdf(0.975);
    let half = t * (var / n as f64).sqrt();
    Ok(Interval {
        lo: mean - half,
        hi: mean + half,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_to_hundred() {
        let samples: Vec<u64> = (1..=100).rev().collect();
        let s = compute_stats(&samples).unwrap();
        assert_eq!((s.min, s.p95, s.p99, s.max, s.n), (1, 95, 99, 100, 100));
        assert_eq!(s.mean, 50.5);
        // population variance of 1..=100 is (100² − 1) / 12
        assert!((s.std - (9999.0f64 / 12.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_sample() {
        let s = compute_stats(&[7]).unwrap();
        assert_eq!((s.min, s.p95, s.p99, s.max), (7, 7, 7, 7));
        assert_eq!((s.mean, s.std), (7.0, 0.0));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(compute_stats(&[]), Err(Error::EmptySamples)));
    }

    #[test]
    fn nearest_rank_small_sets() {
        assert_eq!(nearest_rank(&[10, 20], 95), 20);
        assert_eq!(nearest_rank(&[10, 20], 50), 10);
        assert_eq!(nearest_rank(&[10, 20], 0), 10);
        let twenty: Vec<u64> = (1..=20).collect();
        assert_eq!(nearest_rank(&twenty, 95), 19);
        assert_eq!(nearest_rank(&twenty, 99), 20);
    }

    #[test]
    fn ci_of_known_values() {
        // t(0.975, 4) = 2.776445105...
        let ci = ci95(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let half = 2.776_445_105_197_793 * (2.5f64 / 5.0).sqrt();
        assert!((ci.lo - (3.0 - half)).abs() < 1e-9, "{ci:?}");
        assert!((ci.hi - (3.0 + half)).abs() < 1e-9, "{ci:?}");
        assert_eq!(ci95(&[4.0]).unwrap(), Interval { lo: 4.0, hi: 4.0 });
        assert!(ci95(&[]).is_err());
    }
}
