//! Training-free controllers: uniform random actions (RAND) and
//! boustrophedon coverage path planning (B-CPP).

use std::path::Path;

use rand::Rng;

use crate::env::Env;
use crate::error::{Error, Result};
use crate::goals::{connected_regions, GoalSpec};
use crate::world::Vec3;

/// Clearance above the bed for transits between regions (m).
pub const TRANSIT_LIFT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approach {
    Rand,
    Bcpp,
}

impl Approach {
    pub fn as_str(&self) -> &'static str {
        match self {
            Approach::Rand => "RAND",
            Approach::Bcpp => "B-CPP",
        }
    }
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rand" => Ok(Approach::Rand),
            "bcpp" | "b-cpp" => Ok(Approach::Bcpp),
            other => Err(Error::Config(format!("unknown policy `{other}` (expected rand or bcpp)"))),
        }
    }
}

/// Teleports the tool to a random goal cell center at bed height, then
/// takes `steps` uniform random actions (or until the episode ends).
pub fn rand_policy<R: Rng>(env: &mut Env, rng: &mut R, steps: usize) -> Result<usize> {
    let goal = env.goal().ok_or(Error::NotReset)?;
    let cells: Vec<(usize, usize)> = goal.mask_cells().collect();
    if cells.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (r, c) = cells[rng.random_range(0..cells.len())];
    let (x, y) = goal.goal_map.cell_center(r, c);
    let h0 = goal.h0;
    env.teleport_ee([x, y, h0])?;
    let mut taken = 0;
    while taken < steps && !env.is_done() {
        let a = [
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        ];
        env.step(a)?;
        taken += 1;
    }
    Ok(taken)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointPlan {
    /// Tool bottom-center targets in visiting order.
    pub waypoints: Vec<Vec3>,
    /// Index of the first waypoint of each region.
    pub region_starts: Vec<usize>,
    /// Distance between neighbouring sweep lines (cells).
    pub sweep_spacing: usize,
}

impl WaypointPlan {
    pub fn region_count(&self) -> usize {
        self.region_starts.len()
    }

    pub fn region_of(&self, index: usize) -> usize {
        self.region_starts.partition_point(|&s| s <= index) - 1
    }
}

fn centroid(cells: &[(usize, usize)], cell: f64) -> (f64, f64) {
    let n = cells.len() as f64;
    let (sx, sy) = cells
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &(r, c)| (sx + c as f64 + 0.5, sy + r as f64 + 0.5));
    (sx / n * cell, sy / n * cell)
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Greedy nearest-neighbour tour over `points`, starting from the point
/// nearest `start`. Ties go to the lower index.
pub fn greedy_order(points: &[(f64, f64)], start: (f64, f64)) -> Vec<usize> {
    let mut left: Vec<usize> = (0..points.len()).collect();
    let mut order = Vec::with_capacity(points.len());
    let mut here = start;
    while !left.is_empty() {
        let (k, _) = left
            .iter()
            .enumerate()
            .map(|(k, &i)| (k, dist2(here, points[i])))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        let i = left.remove(k);
        here = points[i];
        order.push(i);
    }
    order
}

/// One sweep over a region: `lines[k]` is the lower cross index covered by
/// line `k`, `spans[k]` the inclusive along-axis range to sweep.
struct Sweep {
    along_cols: bool,
    lines: Vec<usize>,
    spans: Vec<(usize, usize)>,
}

fn region_sweep(region: &[(usize, usize)], rows: usize, cols: usize, w: usize) -> Sweep {
    let r0 = region.iter().map(|p| p.0).min().unwrap_or(0);
    let r1 = region.iter().map(|p| p.0).max().unwrap_or(0);
    let c0 = region.iter().map(|p| p.1).min().unwrap_or(0);
    let c1 = region.iter().map(|p| p.1).max().unwrap_or(0);
    let along_cols = c1 - c0 >= r1 - r0;
    let (lo, hi, cross_len) = if along_cols { (r0, r1, rows) } else { (c0, c1, cols) };
    let max_start = cross_len.saturating_sub(w);
    let mut lines = Vec::new();
    let mut a = lo;
    loop {
        let start = if a + w > hi + 1 { (hi + 1).saturating_sub(w) } else { a };
        let start = start.min(max_start);
        if lines.last() != Some(&start) {
            lines.push(start);
        }
        if a + w > hi {
            break;
        }
        a += w;
    }
    let spans = lines
        .iter()
        .map(|&s| {
            let along = region.iter().filter_map(|&(r, c)| {
                let (cross, along) = if along_cols { (r, c) } else { (c, r) };
                (s..s + w).contains(&cross).then_some(along)
            });
            let (mut mn, mut mx) = (usize::MAX, 0);
            for v in along {
                mn = mn.min(v);
                mx = mx.max(v);
            }
            (mn, mx)
        })
        .collect();
    Sweep {
        along_cols,
        lines,
        spans,
    }
}

/// Highest goal height over goal cells under a footprint centered at
/// `(x, y)`; `h0` if none.
fn footprint_target(goal: &GoalSpec, x: f64, y: f64, footprint: (f64, f64)) -> f64 {
    let map = &goal.goal_map;
    let ee = crate::world::EndEffectorState::new([x, y, 0.0]).with_footprint(footprint.0, footprint.1);
    crate::world::footprint_cells(&ee, map.rows(), map.cols(), map.cell_size())
        .map(|rect| {
            rect.cells()
                .filter(|&(r, c)| goal.goal_mask[map.index(r, c)])
                .map(|(r, c)| map.get(r, c))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .filter(|h| h.is_finite())
        .unwrap_or(goal.h0)
}

/// Serpentine waypoints for one region starting with line `first`
/// (0 = lowest cross index) and direction `forward`.
fn sweep_waypoints(
    goal: &GoalSpec,
    sweep: &Sweep,
    w: usize,
    footprint: (f64, f64),
    from_high: bool,
    mut forward: bool,
) -> Vec<Vec3> {
    let cell = goal.goal_map.cell_size();
    let half = w as f64 / 2.0;
    let mut out = Vec::new();
    let order: Vec<usize> = if from_high {
        (0..sweep.lines.len()).rev().collect()
    } else {
        (0..sweep.lines.len()).collect()
    };
    for k in order {
        let cross = (sweep.lines[k] as f64 + half) * cell;
        let (s, e) = sweep.spans[k];
        if s > e {
            continue;
        }
        let steps: Vec<f64> = if forward {
            (s..=e).map(|j| (j as f64 + half) * cell).collect()
        } else {
            (s..=e).rev().map(|j| (j as f64 + 1.0 - half) * cell).collect()
        };
        for along in steps {
            let (x, y) = if sweep.along_cols { (along, cross) } else { (cross, along) };
            out.push([x, y, footprint_target(goal, x, y, footprint)]);
        }
        forward = !forward;
    }
    out
}

/// Plans a boustrophedon coverage of the goal mask for a tool with the
/// given footprint, starting from `ee_start`.
pub fn plan_bcpp(goal: &GoalSpec, footprint: (f64, f64), ee_start: Vec3) -> Result<WaypointPlan> {
    if goal.mask_count() == 0 {
        return Err(Error::EmptyMask);
    }
    let map = &goal.goal_map;
    let cell = map.cell_size();
    let (rows, cols) = (map.rows(), map.cols());
    let regions = connected_regions(&goal.goal_mask, rows, cols);
    let centroids: Vec<(f64, f64)> = regions.iter().map(|r| centroid(r, cell)).collect();
    let order = greedy_order(&centroids, (ee_start[0], ee_start[1]));

    let w = ((footprint.0.min(footprint.1) / cell).round() as usize).max(1);
    let mut waypoints: Vec<Vec3> = Vec::new();
    let mut region_starts = Vec::new();
    let mut entry = (ee_start[0], ee_start[1]);
    for i in order {
        let sweep = region_sweep(&regions[i], rows, cols, w);
        let candidates = [(false, true), (false, false), (true, true), (true, false)];
        let best = candidates
            .iter()
            .map(|&(hi, fwd)| sweep_waypoints(goal, &sweep, w, footprint, hi, fwd))
            .filter(|p| !p.is_empty())
            .fold(None::<Vec<Vec3>>, |best, p| {
                let d = dist2(entry, (p[0][0], p[0][1]));
                match best {
                    Some(b) if dist2(entry, (b[0][0], b[0][1])) <= d => Some(b),
                    _ => Some(p),
                }
            });
        if let Some(p) = best {
            region_starts.push(waypoints.len());
            let last = p[p.len() - 1];
            entry = (last[0], last[1]);
            waypoints.extend(p);
        }
    }
    Ok(WaypointPlan {
        waypoints,
        region_starts,
        sweep_spacing: w,
    })
}

/// Moves the tool to `target` in straight-line steps of at most one
/// `max_step` per axis. Returns the number of steps taken.
fn move_to(env: &mut Env, target: Vec3) -> Result<usize> {
    let world = env.world().ok_or(Error::NotReset)?;
    let max_step = world.workspace.max_step;
    let target = world.workspace.clamp(target);
    let mut steps = 0;
    loop {
        let p = env.world().ok_or(Error::NotReset)?.ee.position;
        let delta = [target[0] - p[0], target[1] - p[1], target[2] - p[2]];
        let span = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if span <= 1e-12 {
            return Ok(steps);
        }
        let n = (span / max_step - 1e-9).ceil().max(1.0);
        let action = [delta[0] / (n * max_step), delta[1] / (n * max_step), delta[2] / (n * max_step)];
        env.step(action)?;
        steps += 1;
    }
}

/// Runs a plan: lift, transit and descend into each region, then visit its
/// waypoints in order. Returns the number of steps taken.
pub fn execute_plan(env: &mut Env, plan: &WaypointPlan) -> Result<usize> {
    let h0 = env.goal().ok_or(Error::NotReset)?.h0;
    let transit = h0 + TRANSIT_LIFT;
    let mut steps = 0;
    for (i, wp) in plan.waypoints.iter().enumerate() {
        if plan.region_starts.contains(&i) {
            let p = env.world().ok_or(Error::NotReset)?.ee.position;
            if p[2] < transit {
                steps += move_to(env, [p[0], p[1], transit])?;
            }
            let z = env.world().ok_or(Error::NotReset)?.ee.position[2];
            steps += move_to(env, [wp[0], wp[1], z])?;
        }
        steps += move_to(env, *wp)?;
    }
    Ok(steps)
}

/// Writes `index,region,x,y,z` rows.
pub fn write_plan_csv(path: &Path, plan: &WaypointPlan) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["index", "region", "x", "y", "z"]).map_err(|e| Error::csv(path, e))?;
    for (i, p) in plan.waypoints.iter().enumerate() {
        w.write_record([
            i.to_string(),
            plan.region_of(i).to_string(),
            p[0].to_string(),
            p[1].to_string(),
            p[2].to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goals::ShapeFamily;
    use crate::heightfield::HeightMap;

    fn rect_goal(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, depth: f64) -> GoalSpec {
        let mut map = HeightMap::flat(32, 32, 0.01, 0.06).unwrap();
        for r in rows {
            for c in cols.clone() {
                map.set(r, c, 0.06 - depth);
            }
        }
        GoalSpec::from_map(map, 0.06, ShapeFamily::Rectangle, "t".into(), 0).unwrap()
    }

    #[test]
    fn four_by_four_serpentine() {
        let goal = rect_goal(10..14, 10..14, 0.01);
        let plan = plan_bcpp(&goal, (0.02, 0.02), [0.0, 0.0, 0.1]).unwrap();
        assert_eq!(plan.waypoints.len(), 8);
        assert_eq!(plan.region_count(), 1);
        let ys: Vec<f64> = plan.waypoints.iter().map(|p| p[1]).collect();
        assert!(ys[..4].iter().all(|&y| (y - 0.11).abs() < 1e-12));
        assert!(ys[4..].iter().all(|&y| (y - 0.13).abs() < 1e-12));
        let xs: Vec<f64> = plan.waypoints.iter().map(|p| p[0]).collect();
        assert!(xs[..4].windows(2).all(|w| w[1] > w[0]));
        assert!(xs[4..].windows(2).all(|w| w[1] < w[0]));
        assert!(plan.waypoints.iter().all(|p| (p[2] - 0.05).abs() < 1e-12));
    }

    #[test]
    fn odd_width_shifts_last_line_inside() {
        let goal = rect_goal(10..13, 5..15, 0.01);
        let plan = plan_bcpp(&goal, (0.02, 0.02), [0.0, 0.0, 0.1]).unwrap();
        let mut ys: Vec<f64> = plan.waypoints.iter().map(|p| p[1]).collect();
        ys.dedup();
        assert_eq!(ys.len(), 2);
        assert!(ys.iter().all(|&y| y > 0.10 && y < 0.13));
    }

    #[test]
    fn two_regions_follow_nearest_neighbour() {
        let mut map = HeightMap::flat(32, 32, 0.01, 0.06).unwrap();
        for r in 2..6 {
            for c in 2..6 {
                map.set(r, c, 0.05);
                map.set(r + 6, c + 6, 0.05);
            }
        }
        let goal = GoalSpec::from_map(map, 0.06, ShapeFamily::Rectangle, "t".into(), 0).unwrap();
        let near_far = plan_bcpp(&goal, (0.02, 0.02), [0.3, 0.3, 0.1]).unwrap();
        assert_eq!(near_far.region_count(), 2);
        assert!(near_far.waypoints[0][0] > 0.07);
        assert!(near_far.waypoints[near_far.region_starts[1]][0] < 0.07);
        let other = plan_bcpp(&goal, (0.02, 0.02), [0.0, 0.0, 0.1]).unwrap();
        assert!(other.waypoints[0][0] < 0.07);
    }

    #[test]
    fn greedy_tour_is_nearest_first() {
        let pts = [(0.0, 0.0), (10.0, 0.0), (1.0, 0.0)];
        assert_eq!(greedy_order(&pts, (0.2, 0.0)), vec![0, 2, 1]);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let map = HeightMap::flat(4, 4, 0.01, 0.06).unwrap();
        let goal = GoalSpec {
            goal_mask: vec![false; 16],
            goal_map: map,
            family: ShapeFamily::Rectangle,
            id: "e".into(),
            h0: 0.06,
            seed: 0,
        };
        assert!(matches!(plan_bcpp(&goal, (0.02, 0.02), [0.0; 3]), Err(Error::EmptyMask)));
    }

    #[test]
    fn approach_names() {
        assert_eq!("bcpp".parse::<Approach>().unwrap(), Approach::Bcpp);
        assert_eq!("RAND".parse::<Approach>().unwrap(), Approach::Rand);
        assert!("tqc".parse::<Approach>().is_err());
    }
}
