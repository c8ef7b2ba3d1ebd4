//! Shaping and movement rewards, plus the per-episode bookkeeping the
//! progressive variant needs.

use crate::error::{Error, Result};
use crate::goals::GoalSpec;
use crate::heightfield::HeightMap;
use crate::world::{footprint_cells, EndEffectorState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapingVariant {
    Delta,
    Progressive,
    /// No shaping term; the total reward is the movement term alone.
    None,
}

/// Sign convention of the outside-area penalty of the progressive reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgPenalty {
    /// `−α_f · min(d̂° − d̂°_furthest, 0)`
    AsPrinted,
    /// `−α_f · max(d̂° − d̂°_furthest, 0)`: penalize new worst outside states.
    NewWorst,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub alpha_c: f64,
    pub alpha_f: f64,
    pub alpha_m: f64,
    pub shaping: ShapingVariant,
    /// Include the goal-area movement term in the total.
    pub movement_term: bool,
    pub prog_penalty: ProgPenalty,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha_c: 5000.0,
            alpha_f: 1000.0,
            alpha_m: 10.0,
            shaping: ShapingVariant::Delta,
            movement_term: true,
            prog_penalty: ProgPenalty::AsPrinted,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_c > 0.0 && self.alpha_f > 0.0 && self.alpha_m > 0.0) {
            return Err(Error::Config("reward scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    GoalArea,
    Outside,
    All,
}

/// Mean absolute difference between goal and current heights over `region`,
/// with current heights truncated at `h0` so piled-up material counts as zero.
pub fn d_hat(current: &HeightMap, goal: &GoalSpec, region: Region) -> Result<f64> {
    if !current.same_grid(&goal.goal_map) {
        return Err(Error::GridMismatch {
            expected_rows: goal.rows(),
            expected_cols: goal.cols(),
            rows: current.rows(),
            cols: current.cols(),
        });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&hc, &hg), &m) in current
        .heights()
        .iter()
        .zip(goal.goal_map.heights())
        .zip(&goal.goal_mask)
    {
        let selected = match region {
            Region::GoalArea => m,
            Region::Outside => !m,
            Region::All => true,
        };
        if selected {
            sum += (hg - hc.min(goal.h0)).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyRegion(match region {
            Region::GoalArea => "goal area",
            Region::Outside => "outside the goal area",
            Region::All => "grid",
        }));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRewardState {
    pub d_hat_prev: f64,
    pub d_hat_closest: f64,
    pub d_hat_out_furthest: f64,
}

impl EpisodeRewardState {
    pub fn new(d_hat_initial: f64, d_hat_out_initial: f64) -> Self {
        Self {
            d_hat_prev: d_hat_initial,
            d_hat_closest: d_hat_initial,
            d_hat_out_furthest: d_hat_out_initial,
        }
    }

    /// `α_c · (d̂_{t−1} − d̂_t)`
    pub fn reward_delta(&mut self, cfg: &RewardConfig, d_hat_now: f64) -> f64 {
        let r = cfg.alpha_c * (self.d_hat_prev - d_hat_now);
        self.d_hat_prev = d_hat_now;
        self.d_hat_closest = self.d_hat_closest.min(d_hat_now);
        r
    }

    /// Pays only for beating the episode's best `d̂`, with the outside-area
    /// term against the running worst `d̂°`.
    pub fn reward_progressive(&mut self, cfg: &RewardConfig, d_hat_now: f64, d_hat_out_now: f64) -> f64 {
        let gain = cfg.alpha_c * (self.d_hat_closest - d_hat_now).max(0.0);
        let out_delta = d_hat_out_now - self.d_hat_out_furthest;
        let penalty = match cfg.prog_penalty {
            ProgPenalty::AsPrinted => -cfg.alpha_f * out_delta.min(0.0),
            ProgPenalty::NewWorst => -cfg.alpha_f * out_delta.max(0.0),
        };
        self.d_hat_closest = self.d_hat_closest.min(d_hat_now);
        self.d_hat_out_furthest = self.d_hat_out_furthest.max(d_hat_out_now);
        self.d_hat_prev = d_hat_now;
        gain + penalty
    }

    /// Shaping term for the configured variant; updates the state.
    pub fn shaping(&mut self, cfg: &RewardConfig, d_hat_now: f64, d_hat_out_now: f64) -> f64 {
        match cfg.shaping {
            ShapingVariant::Delta => self.reward_delta(cfg, d_hat_now),
            ShapingVariant::Progressive => self.reward_progressive(cfg, d_hat_now, d_hat_out_now),
            ShapingVariant::None => {
                self.d_hat_prev = d_hat_now;
                self.d_hat_closest = self.d_hat_closest.min(d_hat_now);
                self.d_hat_out_furthest = self.d_hat_out_furthest.max(d_hat_out_now);
                0.0
            }
        }
    }
}

/// Distance from the tool's bottom-center to the closest goal-area point
/// (cell centers at their goal height). Returns `(distance, reached)`;
/// `reached` means the footprint overlaps a goal cell, in which case the
/// distance is zero.
pub fn movement_distance(ee: &EndEffectorState, goal: &GoalSpec) -> Result<(f64, bool)> {
    let map = &goal.goal_map;
    if goal.mask_count() == 0 {
        return Err(Error::EmptyMask);
    }
    if let Some(rect) = footprint_cells(ee, map.rows(), map.cols(), map.cell_size()) {
        if rect.cells().any(|(r, c)| goal.goal_mask[map.index(r, c)]) {
            return Ok((0.0, true));
        }
    }
    let [x, y, z] = ee.position;
    let best = goal
        .mask_cells()
        .map(|(r, c)| {
            let (gx, gy) = map.cell_center(r, c);
            let gz = map.get(r, c);
            ((gx - x).powi(2) + (gy - y).powi(2) + (gz - z).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    Ok((best, false))
}

/// `−tanh(α_m · d_m) + 1_reached`
pub fn reward_move(ee: &EndEffectorState, goal: &GoalSpec, cfg: &RewardConfig) -> Result<f64> {
    let (d, reached) = movement_distance(ee, goal)?;
    Ok(move_reward_from_distance(cfg, d, reached))
}

pub fn move_reward_from_distance(cfg: &RewardConfig, distance: f64, reached: bool) -> f64 {
    -(cfg.alpha_m * distance).tanh() + if reached { 1.0 } else { 0.0 }
}

/// Sums the terms enabled by the configuration.
pub fn reward_total(cfg: &RewardConfig, move_r: f64, shaping_r: f64) -> f64 {
    let m = if cfg.movement_term { move_r } else { 0.0 };
    let s = if cfg.shaping == ShapingVariant::None { 0.0 } else { shaping_r };
    m + s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goals::ShapeFamily;

    fn small_goal() -> GoalSpec {
        let mut heights = vec![0.06; 16];
        heights[5] = 0.05;
        let map = HeightMap::from_vec(4, 4, 0.01, heights).unwrap();
        GoalSpec::from_map(map, 0.06, ShapeFamily::Rectangle, "t".into(), 0).unwrap()
    }

    #[test]
    fn d_hat_hand_cases() {
        let goal = small_goal();
        let goal_map = goal.goal_map.clone();
        assert_eq!(d_hat(&goal_map, &goal, Region::GoalArea).unwrap(), 0.0);

        // 2x2 grid with goal heights (0.05, 0.06, 0.06, 0.06) against a flat bed
        let map = HeightMap::from_vec(2, 2, 0.01, vec![0.05, 0.06, 0.06, 0.06]).unwrap();
        let tiny = GoalSpec::from_map(map, 0.06, ShapeFamily::Rectangle, "tiny".into(), 0).unwrap();
        let flat2 = HeightMap::flat(2, 2, 0.01, 0.06).unwrap();
        assert!((d_hat(&flat2, &tiny, Region::All).unwrap() - 0.0025).abs() < 1e-15);

        let flat = HeightMap::flat(4, 4, 0.01, 0.06).unwrap();
        assert!((d_hat(&flat, &goal, Region::GoalArea).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(d_hat(&flat, &goal, Region::Outside).unwrap(), 0.0);
        assert!((d_hat(&flat, &goal, Region::All).unwrap() - 0.01 / 16.0).abs() < 1e-15);

        let mut piled = flat.clone();
        piled.set(0, 0, 0.08);
        assert_eq!(d_hat(&piled, &goal, Region::Outside).unwrap(), 0.0);
    }

    #[test]
    fn d_hat_rejects_grid_mismatch() {
        let goal = small_goal();
        let other = HeightMap::flat(3, 4, 0.01, 0.06).unwrap();
        assert!(matches!(
            d_hat(&other, &goal, Region::GoalArea),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn delta_reward_values() {
        let cfg = RewardConfig::default();
        let mut s = EpisodeRewardState::new(0.0025, 0.0);
        assert_eq!(s.reward_delta(&cfg, 0.0025), 0.0);
        assert!((s.reward_delta(&cfg, 0.0020) - 2.5).abs() < 1e-12);
        assert!((s.reward_delta(&cfg, 0.0025) + 2.5).abs() < 1e-12);
    }

    #[test]
    fn progressive_reward_values() {
        let cfg = RewardConfig::default();
        let mut s = EpisodeRewardState::new(0.0025, 0.001);
        assert_eq!(s.reward_progressive(&cfg, 0.0025, 0.001), 0.0);
        assert!((s.reward_progressive(&cfg, 0.0020, 0.001) - 2.5).abs() < 1e-12);
        assert_eq!(s.d_hat_closest, 0.0020);
    }

    #[test]
    fn progressive_pays_oscillation_once() {
        let cfg = RewardConfig::default();
        let (a, b) = (0.004, 0.003);
        let mut s = EpisodeRewardState::new(a, 0.0);
        let mut positive = Vec::new();
        for t in 0..20 {
            let d = if t % 2 == 0 { b } else { a };
            positive.push(s.reward_progressive(&cfg, d, 0.0));
        }
        assert!((positive[0] - cfg.alpha_c * (a - b)).abs() < 1e-9);
        assert!(positive[1..].iter().all(|&r| r == 0.0));
    }

    #[test]
    fn progressive_penalty_conventions() {
        let printed = RewardConfig::default();
        let mut s = EpisodeRewardState::new(0.01, 0.002);
        // outside drops below the running worst: the printed form pays out
        let r = s.reward_progressive(&printed, 0.01, 0.001);
        assert!((r - printed.alpha_f * 0.001).abs() < 1e-12, "{r}");
        // a new worst is not penalized by the printed form
        assert_eq!(s.reward_progressive(&printed, 0.01, 0.004), 0.0);

        let prose = RewardConfig {
            prog_penalty: ProgPenalty::NewWorst,
            ..printed
        };
        let mut s = EpisodeRewardState::new(0.01, 0.002);
        assert_eq!(s.reward_progressive(&prose, 0.01, 0.001), 0.0);
        let r = s.reward_progressive(&prose, 0.01, 0.003);
        assert!((r + prose.alpha_f * 0.001).abs() < 1e-12);
    }

    #[test]
    fn movement_reward() {
        let cfg = RewardConfig::default();
        let goal = small_goal();
        let inside = EndEffectorState::new([0.015, 0.015, 0.1]);
        assert_eq!(reward_move(&inside, &goal, &cfg).unwrap(), 1.0);
        let r = move_reward_from_distance(&cfg, 0.1, false);
        assert!((r + 0.761_594_155_955_764_9).abs() < 1e-12);

        // goal cell (1, 1) center is (0.015, 0.015) at height 0.05
        let away = EndEffectorState::new([0.015, 0.115, 0.05]);
        let (d, reached) = movement_distance(&away, &goal).unwrap();
        assert!(!reached);
        assert!((d - 0.1).abs() < 1e-12);
    }

    #[test]
    fn total_reward_terms() {
        let cfg = RewardConfig::default();
        assert_eq!(reward_total(&cfg, 1.0, 0.0), 1.0);
        assert!((reward_total(&cfg, -0.7616, 2.5) - 1.7384).abs() < 1e-12);
        let none = RewardConfig {
            shaping: ShapingVariant::None,
            ..cfg
        };
        assert_eq!(reward_total(&none, -0.3, 2.5), -0.3);
        let no_move = RewardConfig {
            movement_term: false,
            ..cfg
        };
        assert_eq!(reward_total(&no_move, -0.3, 2.5), 2.5);
    }
}
