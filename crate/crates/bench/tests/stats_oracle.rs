// SPDX-License-Identifier: Apache-2.0

mod support;

use proptest::prelude::*;
use simshm_bench::compute_stats;
use support::{for_each_sequence, oracle_stats};

#[test]
fn oracle_reproduces_hand_computed_values() {
    let s = oracle_stats(&(1..=100).collect::<Vec<u64>>()).unwrap();
    assert_eq!((s.min, s.p95, s.p99, s.max), (1, 95, 99, 100));
    assert_eq!(s.mean, 50.5);
    let s = oracle_stats(&[7]).unwrap();
    assert_eq!((s.p95, s.std), (7, 0.0));
    // {2, 4, 4, 4, 5, 5, 7, 9}: the textbook population std of exactly 2
    let s = oracle_stats(&[2, 4, 4, 4, 5, 5, 7, 9]).unwrap();
    assert_eq!((s.mean, s.std), (5.0, 2.0));
    assert!(oracle_stats(&[]).is_none());
}

#[test]
fn exhaustive_small_sets() {
    let values = [0, 1, 2, 7, 1_000_000_007];
    let mut checked = 0;
    for n in 1..=7 {
        for_each_sequence(&values, n, |s| {
            assert_eq!(compute_stats(s).unwrap(), oracle_stats(s).unwrap(), "{s:?}");
            checked += 1;
        });
    }
    assert_eq!(checked, (1..=7).map(|n| 5usize.pow(n)).sum::<usize>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn matches_oracle(samples in prop::collection::vec(0u64..20_000_000_000, 1..300)) {
        prop_assert_eq!(compute_stats(&samples).unwrap(), oracle_stats(&samples).unwrap());
    }

    #[test]
    fn ordering_invariants(samples in prop::collection::vec(0u64..1u64 << 40, 1..300)) {
        let s = compute_stats(&samples).unwrap();
        prop_assert!(s.min as f64 <= s.mean && s.mean <= s.max as f64);
        prop_assert!(s.min <= s.p95 && s.p95 <= s.p99 && s.p99 <= s.max);
        prop_assert!(s.std >= 0.0);
        prop_assert_eq!(s.n, samples.len() as u64);
    }
}
