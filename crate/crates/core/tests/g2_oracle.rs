//! The pulsed correlator against an all-pairs reference.

use proptest::prelude::*;
use qfcsim::analysis::g2::cross_correlation_counts;

/// Every pair, with the separation computed in exact integer arithmetic:
/// `n = floor((2·dt + P) / (2·P))`.
pub fn brute_force(t0: &[u64], t1: &[u64], period_ps: i64, max_sep: i64) -> Vec<u64> {
    let mut counts = vec![0u64; (2 * max_sep + 1) as usize];
    for &a in t0 {
        for &b in t1 {
            let dt = b as i64 - a as i64;
            let n = (2 * dt + period_ps).div_euclid(2 * period_ps);
            if n.abs() <= max_sep {
                counts[(n + max_sep) as usize] += 1;
            }
        }
    }
    counts
}

fn sorted(mut v: Vec<u64>) -> Vec<u64> {
    v.sort_unstable();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn matches_all_pairs(
        a in prop::collection::vec(0u64..20_000_000, 0..300),
        b in prop::collection::vec(0u64..20_000_000, 0..300),
        max_sep in 0u32..12,
    ) {
        let (a, b) = (sorted(a), sorted(b));
        let fast = cross_correlation_counts(&a, &b, 1e6, max_sep);
        prop_assert_eq!(fast, brute_force(&a, &b, 1_000_000, max_sep as i64));
    }
}

#[test]
fn half_period_boundaries() {
    // dt exactly at ±P/2 rounds up, like floor(dt/P + 1/2)
    let a = vec![10_000_000u64];
    let b = vec![9_500_000, 10_499_999, 10_500_000, 11_500_000];
    let fast = cross_correlation_counts(&a, &b, 1e6, 3);
    assert_eq!(fast, brute_force(&a, &b, 1_000_000, 3));
    assert_eq!(fast, vec![0, 0, 0, 2, 1, 1, 0]);
}
