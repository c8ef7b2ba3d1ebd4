//! Gym-style episode driver: reset, step, observation assembly and logging.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::goals::{GoalSpec, GridSpec};
use crate::heightfield::{HeightMap, ReposeConfig, MAX_HEIGHT};
use crate::perception::{map_error, reconstruct, render_depth, Camera, ReconstructionState};
use crate::rewards::{d_hat, reward_move, reward_total, EpisodeRewardState, Region, RewardConfig};
use crate::world::{EndEffectorState, Vec3, WorkspaceConfig, World};

/// Side length of the padded observation maps.
pub const OBS_GRID: usize = 32;
/// Threshold for counting a goal cell as changed (m).
pub const CHANGED_EPS: f64 = 0.0005;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationMode {
    Privileged,
    Reconstructed,
}

impl std::str::FromStr for ObservationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "priv" | "privileged" => Ok(Self::Privileged),
            "recon" | "reconstructed" => Ok(Self::Reconstructed),
            other => Err(Error::Config(format!("unknown observation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    /// Episode length; `None` disables the cap (baseline execution).
    pub max_steps: Option<usize>,
    pub h0: f64,
    /// Start cuboid size (x, y, z), centered over the workspace.
    pub start_box: Vec3,
    /// Gap between the bed and the bottom of the start cuboid.
    pub start_lift: f64,
    pub observation_mode: ObservationMode,
    pub grid: GridSpec,
    pub reward: RewardConfig,
    pub repose: ReposeConfig,
    /// Motion limits; the x/y extent is taken from `grid`.
    pub workspace: WorkspaceConfig,
    pub footprint: (f64, f64),
    /// Depth noise in reconstructed mode (m).
    pub depth_noise: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_steps: Some(40),
            h0: 0.06,
            start_box: [0.30, 0.30, 0.05],
            start_lift: 0.02,
            observation_mode: ObservationMode::Privileged,
            grid: GridSpec::default(),
            reward: RewardConfig::default(),
            repose: ReposeConfig::default(),
            workspace: WorkspaceConfig::default(),
            footprint: (0.02, 0.02),
            depth_noise: 0.0,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.grid.rows == 0 || self.grid.cols == 0 || !(self.grid.cell_size > 0.0) {
            return Err(Error::Config("grid must be non-empty with positive cells".into()));
        }
        if self.grid.rows > OBS_GRID || self.grid.cols > OBS_GRID {
            return Err(Error::Config(format!("grid larger than {OBS_GRID}x{OBS_GRID}")));
        }
        if !(0.0..=MAX_HEIGHT).contains(&self.h0) {
            return Err(Error::Config(format!("h0 must lie in [0, {MAX_HEIGHT}]")));
        }
        if !(self.footprint.0 > 0.0 && self.footprint.1 > 0.0) {
            return Err(Error::Config("footprint must be positive".into()));
        }
        if !(self.depth_noise >= 0.0) {
            return Err(Error::Config("depth noise must be non-negative".into()));
        }
        let ws = self.world_workspace();
        let (cx, cy) = ws.center();
        let lo = [cx - self.start_box[0] / 2.0, cy - self.start_box[1] / 2.0, self.h0 + self.start_lift];
        let hi = [
            cx + self.start_box[0] / 2.0,
            cy + self.start_box[1] / 2.0,
            self.h0 + self.start_lift + self.start_box[2],
        ];
        if self.start_box.iter().any(|&s| s < 0.0) || ws.clamp(lo) != lo || ws.clamp(hi) != hi {
            return Err(Error::Config("start box must lie inside the workspace".into()));
        }
        self.reward.validate()?;
        self.repose.validate()?;
        ws.validate()
    }

    /// Workspace with its x/y extent matched to the grid.
    pub fn world_workspace(&self) -> WorkspaceConfig {
        WorkspaceConfig {
            extent: (
                self.grid.cols as f64 * self.grid.cell_size,
                self.grid.rows as f64 * self.grid.cell_size,
            ),
            ..self.workspace
        }
    }
}

/// Normalized observation. Maps are row-major `OBS_GRID × OBS_GRID`; a
/// smaller grid sits in the middle with zeros around it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub ee_current: Vec3,
    pub ee_previous: Vec3,
    /// `(H_g − H_c) / MAX_HEIGHT`, clamped to `[-1, 1]`.
    pub diff_map: Vec<f64>,
    pub ee_mask: Vec<bool>,
    pub goal_mask: Vec<bool>,
}

impl Observation {
    pub fn numeric_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.ee_current
            .iter()
            .chain(&self.ee_previous)
            .chain(&self.diff_map)
            .copied()
    }
}

/// Shapes and bounds of the action and observation spaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spaces {
    pub action_dim: usize,
    pub action_bounds: (f64, f64),
    pub position_dim: usize,
    pub map_shape: (usize, usize),
    pub value_bounds: (f64, f64),
}

pub const SPACES: Spaces = Spaces {
    action_dim: 3,
    action_bounds: (-1.0, 1.0),
    position_dim: 3,
    map_shape: (OBS_GRID, OBS_GRID),
    value_bounds: (-1.0, 1.0),
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub r_move: f64,
    pub r_shape: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// 1-based step index.
    pub step: usize,
    pub action: Vec3,
    pub reward: RewardBreakdown,
    /// `d̂` over the goal area (m), on the simulator map.
    pub d_hat: f64,
    /// `d̂°` outside the goal area (m); 0 when the mask covers the grid.
    pub d_hat_out: f64,
    /// Percentage of goal cells changed at some step so far.
    pub changed_pct: f64,
    pub displaced_volume: f64,
    pub spill: f64,
    pub ee_position: Vec3,
    pub in_medium: bool,
    /// Mean absolute reconstruction error (m), reconstructed mode only.
    pub recon_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

struct Episode {
    goal: GoalSpec,
    world: World,
    rewards: EpisodeRewardState,
    recon: Option<ReconstructionState>,
    t: usize,
    done: bool,
    d_hat_initial: f64,
    /// Goal cells that have left the `h0 ± CHANGED_EPS` band at some step.
    changed: Vec<bool>,
    log: Vec<StepInfo>,
}

impl Episode {
    /// Marks newly changed goal cells and returns the changed percentage.
    fn update_changed(&mut self) -> f64 {
        let h0 = self.goal.h0;
        let mut n = 0usize;
        for (i, (&h, &m)) in self.world.map.heights().iter().zip(&self.goal.goal_mask).enumerate() {
            if m {
                self.changed[i] |= (h - h0).abs() > CHANGED_EPS;
                n += usize::from(self.changed[i]);
            }
        }
        100.0 * n as f64 / self.goal.mask_count().max(1) as f64
    }
}

pub struct Env {
    cfg: EnvConfig,
    camera: Camera,
    rng: ChaCha8Rng,
    episode: Option<Episode>,
}

fn d_hat_or_zero(map: &HeightMap, goal: &GoalSpec, region: Region) -> Result<f64> {
    match d_hat(map, goal, region) {
        Err(Error::EmptyRegion(_)) => Ok(0.0),
        other => other,
    }
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let ws = cfg.world_workspace();
        let camera = Camera::default_for(ws.extent, cfg.h0);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            cfg,
            camera,
            rng,
            episode: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    /// Starts an episode on `goal`. With `seed`, the environment RNG is
    /// reseeded first.
    pub fn reset(&mut self, goal: GoalSpec, seed: Option<u64>) -> Result<Observation> {
        if let Some(s) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(s);
        }
        let g = &self.cfg.grid;
        if goal.rows() != g.rows
            || goal.cols() != g.cols
            || (goal.goal_map.cell_size() - g.cell_size).abs() > 1e-12
        {
            return Err(Error::GridMismatch {
                expected_rows: g.rows,
                expected_cols: g.cols,
                rows: goal.rows(),
                cols: goal.cols(),
            });
        }
        goal.validate()?;
        let map = HeightMap::flat(g.rows, g.cols, g.cell_size, self.cfg.h0)?;
        let ws = self.cfg.world_workspace();
        let (cx, cy) = ws.center();
        let b = self.cfg.start_box;
        let z0 = self.cfg.h0 + self.cfg.start_lift;
        let start = [
            cx + (self.rng.random::<f64>() - 0.5) * b[0],
            cy + (self.rng.random::<f64>() - 0.5) * b[1],
            z0 + self.rng.random::<f64>() * b[2],
        ];
        let ee = EndEffectorState::new(start).with_footprint(self.cfg.footprint.0, self.cfg.footprint.1);
        let world = World::new(map, ee, ws, self.cfg.repose)?;
        let d0 = d_hat(&world.map, &goal, Region::GoalArea)?;
        let d0_out = d_hat_or_zero(&world.map, &goal, Region::Outside)?;
        let recon = match self.cfg.observation_mode {
            ObservationMode::Privileged => None,
            ObservationMode::Reconstructed => Some(ReconstructionState::new(world.map.clone(), self.cfg.depth_noise)),
        };
        self.episode = Some(Episode {
            goal,
            world,
            rewards: EpisodeRewardState::new(d0, d0_out),
            recon,
            t: 0,
            done: false,
            d_hat_initial: d0,
            changed: vec![false; g.rows * g.cols],
            log: Vec::new(),
        });
        let (observed, _) = self.observe()?;
        Ok(self.build(&observed))
    }

    /// Places the tool at `position` without disturbing the bed.
    pub fn teleport_ee(&mut self, position: Vec3) -> Result<()> {
        let ep = self.episode.as_mut().ok_or(Error::NotReset)?;
        ep.world.teleport(position);
        Ok(())
    }

    pub fn step(&mut self, action: Vec3) -> Result<StepResult> {
        let cfg = self.cfg.reward;
        let ep = self.episode.as_mut().ok_or(Error::NotReset)?;
        if ep.done {
            return Err(Error::EpisodeDone);
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config(format!("non-finite action {action:?}")));
        }
        let report = ep.world.apply_action(action)?;
        ep.t += 1;
        let d = d_hat(&ep.world.map, &ep.goal, Region::GoalArea)?;
        let d_out = d_hat_or_zero(&ep.world.map, &ep.goal, Region::Outside)?;
        let r_shape = ep.rewards.shaping(&cfg, d, d_out);
        let r_move = reward_move(&ep.world.ee, &ep.goal, &cfg)?;
        let total = reward_total(&cfg, r_move, r_shape);
        ep.done = self.cfg.max_steps == Some(ep.t);
        let mut info = StepInfo {
            step: ep.t,
            action,
            reward: RewardBreakdown { r_move, r_shape, total },
            d_hat: d,
            d_hat_out: d_out,
            changed_pct: ep.update_changed(),
            displaced_volume: report.displaced,
            spill: report.spill,
            ee_position: ep.world.ee.position,
            in_medium: ep.world.ee_in_medium(),
            recon_error: None,
        };
        let done = ep.done;
        let (observed, err) = self.observe()?;
        info.recon_error = err;
        let observation = self.build(&observed);
        if let Some(ep) = self.episode.as_mut() {
            ep.log.push(info.clone());
        }
        Ok(StepResult {
            observation,
            reward: total,
            done,
            info,
        })
    }

    /// Current height map in the configured observation mode, plus the
    /// reconstruction error in reconstructed mode.
    fn observe(&mut self) -> Result<(HeightMap, Option<f64>)> {
        let ep = self.episode.as_mut().ok_or(Error::NotReset)?;
        let Some(state) = ep.recon.as_mut() else {
            return Ok((ep.world.map.clone(), None));
        };
        let noise = (state.noise_std > 0.0).then_some((state.noise_std, &mut self.rng));
        let image = render_depth(&ep.world.map, Some(&ep.world.ee), &self.camera, noise)?;
        let mask = ep.world.ee_mask();
        let map = reconstruct(&image, state, &mask, Some(&ep.world.ee))?;
        let (mean, _) = map_error(&map, &ep.world.map);
        Ok((map, Some(mean)))
    }

    fn build(&self, observed: &HeightMap) -> Observation {
        let ep = self.episode.as_ref().expect("episode exists after reset");
        build_observation(&ep.world, &ep.goal, observed)
    }

    pub fn world(&self) -> Option<&World> {
        self.episode.as_ref().map(|e| &e.world)
    }

    pub fn goal(&self) -> Option<&GoalSpec> {
        self.episode.as_ref().map(|e| &e.goal)
    }

    pub fn step_count(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.t)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.done)
    }

    /// `d̂` over the goal area right after reset.
    pub fn d_hat_initial(&self) -> Option<f64> {
        self.episode.as_ref().map(|e| e.d_hat_initial)
    }

    pub fn reward_state(&self) -> Option<&EpisodeRewardState> {
        self.episode.as_ref().map(|e| &e.rewards)
    }

    pub fn log(&self) -> &[StepInfo] {
        self.episode.as_ref().map_or(&[], |e| &e.log)
    }

    /// Mutable access to the environment RNG, for policies that share it.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

fn normalize_position(p: Vec3, ws: &WorkspaceConfig) -> Vec3 {
    let (hx, hy) = (ws.extent.0 / 2.0, ws.extent.1 / 2.0);
    [
        ((p[0] - hx) / hx).clamp(-1.0, 1.0),
        ((p[1] - hy) / hy).clamp(-1.0, 1.0),
        (p[2] / MAX_HEIGHT * 2.0 - 1.0).clamp(-1.0, 1.0),
    ]
}

/// Assembles the normalized observation from the world, goal and the
/// current (privileged or reconstructed) height map.
pub fn build_observation(world: &World, goal: &GoalSpec, current: &HeightMap) -> Observation {
    let (rows, cols) = (goal.rows(), goal.cols());
    let (r0, c0) = ((OBS_GRID - rows) / 2, (OBS_GRID - cols) / 2);
    let n = OBS_GRID * OBS_GRID;
    let mut diff_map = vec![0.0; n];
    let mut ee_mask = vec![false; n];
    let mut goal_mask = vec![false; n];
    let tool = world.ee_mask();
    for r in 0..rows {
        for c in 0..cols {
            let i = goal.goal_map.index(r, c);
            let o = (r + r0) * OBS_GRID + c + c0;
            diff_map[o] = ((goal.goal_map.heights()[i] - current.heights()[i]) / MAX_HEIGHT).clamp(-1.0, 1.0);
            ee_mask[o] = tool[i];
            goal_mask[o] = goal.goal_mask[i];
        }
    }
    Observation {
        ee_current: normalize_position(world.ee.position, &world.workspace),
        ee_previous: normalize_position(world.ee.previous_position, &world.workspace),
        diff_map,
        ee_mask,
        goal_mask,
    }
}

const LOG_HEADER: [&str; 15] = [
    "step", "ax", "ay", "az", "r_move", "r_shape", "r_total", "d_hat", "d_hat_out", "changed_pct", "ee_x",
    "ee_y", "ee_z", "in_medium", "displaced_volume",
];

/// Writes one CSV row per step.
pub fn write_episode_log(path: &Path, log: &[StepInfo]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(LOG_HEADER).map_err(|e| Error::csv(path, e))?;
    for s in log {
        let row = [
            s.step.to_string(),
            s.action[0].to_string(),
            s.action[1].to_string(),
            s.action[2].to_string(),
            s.reward.r_move.to_string(),
            s.reward.r_shape.to_string(),
            s.reward.total.to_string(),
            s.d_hat.to_string(),
            s.d_hat_out.to_string(),
            s.changed_pct.to_string(),
            s.ee_position[0].to_string(),
            s.ee_position[1].to_string(),
            s.ee_position[2].to_string(),
            u8::from(s.in_medium).to_string(),
            s.displaced_volume.to_string(),
        ];
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
