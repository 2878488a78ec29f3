// SPDX-License-Identifier: Apache-2.0

//! Brute-force reference for latency statistics.

use simshm_bench::LatencyStats;

/// Sort-based oracle. Percentiles come from a cumulative count scan:
/// the smallest value whose at-or-below count reaches `q%` of the samples.
/// Variance comes from pairwise differences,
/// `n² · var = Σ_{i<j} (x_i − x_j)²`.
pub fn oracle_stats(samples: &[u64]) -> Option<LatencyStats> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort();
    let n = sorted.len();
    let percentile = |q: u128| {
        let mut seen = 0u128;
        for &v in &sorted {
            seen += 1;
            if seen * 100 >= q * n as u128 {
                return v;
            }
        }
        unreachable!()
    };
    let mut sum = 0u128;
    for &v in &sorted {
        sum += v as u128;
    }
    let mut pairwise = 0u128;
    for i in 0..n {
        for j in i + 1..n {
            let d = sorted[j].abs_diff(sorted[i]) as u128;
            pairwise += d * d;
        }
    }
    let nf = n as f64;
    Some(LatencyStats {
        min: sorted[0],
        mean: sum as f64 / nf,
        p95: percentile(95),
        p99: percentile(99),
        max: sorted[n - 1],
        std: (pairwise as f64 / (nf * nf)).sqrt(),
        n: n as u64,
        delivery_ratio: 1.0,
    })
}

/// Every multiset-ordered sequence of length `n` over `values`, in turn.
pub fn for_each_sequence(values: &[u64], n: usize, mut f: impl FnMut(&[u64])) {
    let mut idx = vec![0usize; n];
    let mut buf = vec![0u64; n];
    loop {
        for (b, &i) in buf.iter_mut().zip(&idx) {
            *b = values[i];
        }
        f(&buf);
        let mut k = 0;
        loop {
            if k == n {
                return;
            }
            idx[k] += 1;
            if idx[k] < values.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
