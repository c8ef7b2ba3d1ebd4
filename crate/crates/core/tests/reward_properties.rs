use granular_core::goals::{gen_goal, GridSpec, ShapeFamily};
use granular_core::heightfield::HeightMap;
use granular_core::rewards::{
    d_hat, reward_move, EpisodeRewardState, ProgPenalty, Region, RewardConfig, ShapingVariant,
};
use granular_core::world::EndEffectorState;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arb_family() -> impl Strategy<Value = ShapeFamily> {
    prop_oneof![
        Just(ShapeFamily::Rectangle),
        Just(ShapeFamily::LShape),
        Just(ShapeFamily::Polygon)
    ]
}

#[test]
fn delta_reward_telescopes() {
    let cfg = RewardConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let d0 = rng.random_range(0.0..0.03);
        let mut st = EpisodeRewardState::new(d0, 0.0);
        let mut sum = 0.0;
        let mut last = d0;
        for _ in 0..rng.random_range(1..200) {
            last = rng.random_range(0.0..0.03);
            sum += st.reward_delta(&cfg, last);
        }
        assert!((sum - cfg.alpha_c * (d0 - last)).abs() < 1e-9, "{sum}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn progressive_gain_is_bounded_by_initial_error(
        d0 in 0.0f64..0.03,
        seq in prop::collection::vec((0.0f64..0.03, 0.0f64..0.05), 1..100),
    ) {
        let cfg = RewardConfig { shaping: ShapingVariant::Progressive, prog_penalty: ProgPenalty::NewWorst, ..Default::default() };
        let mut st = EpisodeRewardState::new(d0, 0.0);
        let total: f64 = seq.iter().map(|&(d, o)| st.reward_progressive(&cfg, d, o)).sum();
        prop_assert!(total <= cfg.alpha_c * d0 + 1e-9);

        // with the outside term fixed only the gains remain
        let cfg = RewardConfig { prog_penalty: ProgPenalty::AsPrinted, ..cfg };
        let mut st = EpisodeRewardState::new(d0, 0.01);
        let mut total = 0.0;
        for &(d, _) in &seq {
            let r = st.reward_progressive(&cfg, d, 0.01);
            prop_assert!(r >= 0.0);
            total += r;
        }
        let best = seq.iter().map(|p| p.0).fold(d0, f64::min);
        prop_assert!((total - cfg.alpha_c * (d0 - best)).abs() < 1e-9);
    }

    #[test]
    fn move_reward_in_range(
        family in arb_family(),
        seed in 0u64..50,
        pos in [-0.1f64..0.5, -0.1f64..0.5, 0.0f64..0.3],
    ) {
        let goal = gen_goal(family, seed, GridSpec::default(), 0.06).unwrap();
        let cfg = RewardConfig::default();
        let ee = EndEffectorState::new(pos);
        let r = reward_move(&ee, &goal, &cfg).unwrap();
        prop_assert!(r > -1.0 && r <= 1.0, "{}", r);
    }

    /// Independent evaluation of the goal-area error: every mask cell
    /// contributes |goal − min(current, h0)|.
    #[test]
    fn d_hat_matches_direct_sum(
        family in arb_family(),
        seed in 0u64..50,
        heights in prop::collection::vec(0.0f64..0.12, 32 * 32),
    ) {
        let goal = gen_goal(family, seed, GridSpec::default(), 0.06).unwrap();
        let cur = HeightMap::from_vec(32, 32, 0.01, heights.clone()).unwrap();
        let mut sum = 0.0;
        let mut n = 0.0;
        for r in 0..32 {
            for c in 0..32 {
                if (goal.goal_map.get(r, c) - 0.06).abs() > 1e-7 {
                    sum += (goal.goal_map.get(r, c) - heights[r * 32 + c].min(0.06)).abs();
                    n += 1.0;
                }
            }
        }
        let d = d_hat(&cur, &goal, Region::GoalArea).unwrap();
        prop_assert!((d - sum / n).abs() < 1e-12);
    }
}
