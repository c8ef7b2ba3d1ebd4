use granular_core::evaluation::{changed_pct, mann_whitney_u, metric_execution};
use granular_core::goals::{gen_goal, GridSpec, ShapeFamily};
use granular_core::heightfield::HeightMap;
use proptest::prelude::*;

/// U by pairwise counting, ties worth one half.
fn pairwise_u(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 }))
        .sum()
}

/// Exact two-sided p-value by relabelling the pooled sample in every way.
fn permutation_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let mean = (a.len() * b.len()) as f64 / 2.0;
    let obs = (pairwise_u(a, b) - mean).abs();
    let (mut hits, mut total) = (0u64, 0u64);
    for bits in 0u32..(1 << n) {
        if bits.count_ones() as usize != a.len() {
            continue;
        }
        let (x, y): (Vec<(usize, f64)>, Vec<(usize, f64)>) =
            pooled.iter().copied().enumerate().partition(|(i, _)| bits & (1 << i) != 0);
        let x: Vec<f64> = x.into_iter().map(|p| p.1).collect();
        let y: Vec<f64> = y.into_iter().map(|p| p.1).collect();
        total += 1;
        if (pairwise_u(&x, &y) - mean).abs() >= obs - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

fn small_sample() -> impl Strategy<Value = Vec<f64>> {
    // coarse values so ties are common
    prop::collection::vec((0i32..6).prop_map(|v| v as f64), 1..=7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn exact_test_matches_permutation_oracle(a in small_sample(), b in small_sample()) {
        let mw = mann_whitney_u(&a, &b).unwrap();
        prop_assert!(mw.exact || mw.degenerate);
        prop_assert!((mw.u - pairwise_u(&a, &b)).abs() < 1e-9);
        prop_assert!((mw.p - permutation_p(&a, &b)).abs() < 1e-9, "{} vs {}", mw.p, permutation_p(&a, &b));
    }

    #[test]
    fn test_is_symmetric(
        a in prop::collection::vec(-10.0f64..10.0, 1..40),
        b in prop::collection::vec(-10.0f64..10.0, 1..40),
    ) {
        let ab = mann_whitney_u(&a, &b).unwrap();
        let ba = mann_whitney_u(&b, &a).unwrap();
        prop_assert!((ab.p - ba.p).abs() < 1e-12);
        prop_assert!((ab.u + ba.u - (a.len() * b.len()) as f64).abs() < 1e-9);
        prop_assert!(ab.p > 0.0 && ab.p <= 1.0);
    }

    #[test]
    fn changed_share_shrinks_with_tolerance(
        seed in 0u64..30,
        heights in prop::collection::vec(0.04f64..0.08, 32 * 32),
        e1 in 0.0f64..0.01,
        e2 in 0.0f64..0.01,
    ) {
        let goal = gen_goal(ShapeFamily::ALL[(seed % 3) as usize], seed, GridSpec::default(), 0.06).unwrap();
        let map = HeightMap::from_vec(32, 32, 0.01, heights).unwrap();
        let (lo, hi) = (e1.min(e2), e1.max(e2));
        let a = changed_pct(&map, &goal, lo).unwrap();
        let b = changed_pct(&map, &goal, hi).unwrap();
        prop_assert!(b <= a && (0.0..=100.0).contains(&a));
    }

    #[test]
    fn execution_never_exceeds_episode_length(flags in prop::collection::vec(any::<bool>(), 0..60)) {
        let n = metric_execution(&flags);
        prop_assert!(n <= flags.len());
        if !flags.contains(&true) {
            prop_assert_eq!(n, 0);
        }
    }
}

#[test]
fn identical_samples_give_p_one() {
    let a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
    let mw = mann_whitney_u(&a, &a).unwrap();
    assert!((mw.p - 1.0).abs() < 1e-12);
}
