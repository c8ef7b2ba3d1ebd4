//! Benchmark metrics, batch evaluation and the Mann-Whitney U test.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::baselines::{execute_plan, plan_bcpp, rand_policy, Approach};
use crate::env::{Env, EnvConfig, ObservationMode, StepInfo};
use crate::error::{Error, Result};
use crate::goals::GoalSpec;
use crate::heightfield::HeightMap;
use crate::rewards::{d_hat, Region};

/// Consecutive out-of-medium steps that end the execution count.
pub const EXECUTION_WINDOW: usize = 3;

/// Percentage of goal-area cells whose height differs from `h0` by more
/// than `eps`.
pub fn changed_pct(map: &HeightMap, goal: &GoalSpec, eps: f64) -> Result<f64> {
    if !map.same_grid(&goal.goal_map) {
        return Err(Error::GridMismatch {
            expected_rows: goal.rows(),
            expected_cols: goal.cols(),
            rows: map.rows(),
            cols: map.cols(),
        });
    }
    let n = goal.mask_count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let changed = map
        .heights()
        .iter()
        .zip(&goal.goal_mask)
        .filter(|(h, &m)| m && (*h - goal.h0).abs() > eps)
        .count();
    Ok(100.0 * changed as f64 / n as f64)
}

/// `d̂` over the goal area of the final map.
pub fn metric_height_diff(map: &HeightMap, goal: &GoalSpec) -> Result<f64> {
    d_hat(map, goal, Region::GoalArea)
}

/// Steps from the start of the episode until the first step of the earliest
/// run of three out-of-medium steps that follows the tool's first contact.
/// A tool that never touches the medium scores 0; without such a run the
/// full length is returned.
pub fn metric_execution(in_medium: &[bool]) -> usize {
    let Some(first) = in_medium.iter().position(|&m| m) else {
        return 0;
    };
    (first + 1..in_medium.len())
        .find(|&i| i + EXECUTION_WINDOW <= in_medium.len() && in_medium[i..i + EXECUTION_WINDOW].iter().all(|m| !m))
        .unwrap_or(in_medium.len())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
    /// The pooled sample is constant; `p` is 1.
    pub degenerate: bool,
}

fn midranks(pooled: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pooled[idx[j + 1]] == pooled[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Calls `f` with every `k`-subset of `0..n` as a sorted index list.
fn for_each_subset(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        f(&pick);
        let Some(i) = (0..k).rev().find(|&i| pick[i] < n - k + i) else {
            return;
        };
        pick[i] += 1;
        for j in i + 1..k {
            pick[j] = pick[j - 1] + 1;
        }
    }
}

/// Two-sided Mann-Whitney U test. Exact over all rank assignments when
/// both samples have at most 8 values, otherwise the normal approximation
/// with tie and continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("Mann-Whitney U needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Config("Mann-Whitney U samples must be finite".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let u_of = |rank_sum: f64| rank_sum - (na * (na + 1)) as f64 / 2.0;
    let u = u_of(ranks[..na].iter().sum());
    let mean = (na * nb) as f64 / 2.0;

    if pooled.iter().all(|&v| v == pooled[0]) {
        return Ok(MannWhitney {
            u,
            p: 1.0,
            exact: na <= 8 && nb <= 8,
            degenerate: true,
        });
    }

    if na <= 8 && nb <= 8 {
        let observed = (u - mean).abs();
        let (mut extreme, mut total) = (0u64, 0u64);
        for_each_subset(na + nb, na, &mut |pick| {
            let us = u_of(pick.iter().map(|&i| ranks[i]).sum());
            if (us - mean).abs() >= observed - 1e-9 {
                extreme += 1;
            }
            total += 1;
        });
        return Ok(MannWhitney {
            u,
            p: extreme as f64 / total as f64,
            exact: true,
            degenerate: false,
        });
    }

    let n = (na + nb) as f64;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        tie_sum += t * t * t - t;
        i += j;
    }
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    let p = (2.0 * normal.sf(z)).min(1.0);
    Ok(MannWhitney {
        u,
        p,
        exact: false,
        degenerate: false,
    })
}

/// Significance marker for the two thresholds used in result tables.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub episode: usize,
    pub goal_id: String,
    pub approach: Approach,
    /// `d̂` over the goal area at episode end (m).
    pub height_diff: f64,
    /// Goal cells changed at some step of the episode (%).
    pub changed_pct: f64,
    pub execution_steps: usize,
    pub seed: u64,
    /// Mean per-step reconstruction error (m), reconstructed mode only.
    pub recon_error: Option<f64>,
}

/// Runs one episode of `approach` on a goal drawn uniformly with `seed`.
pub fn run_episode(
    approach: Approach,
    goals: &[GoalSpec],
    cfg: &EnvConfig,
    episode: usize,
    seed: u64,
) -> Result<(EpisodeResult, Vec<StepInfo>)> {
    if goals.is_empty() {
        return Err(Error::Config("no goals to evaluate on".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let goal = &goals[rng.random_range(0..goals.len())];
    let mut env_cfg = cfg.clone();
    env_cfg.seed = seed;
    let rand_steps = cfg.max_steps.unwrap_or(40);
    if approach == Approach::Bcpp {
        env_cfg.max_steps = None;
    }
    let mut env = Env::new(env_cfg)?;
    env.reset(goal.clone(), Some(seed))?;
    match approach {
        Approach::Rand => {
            rand_policy(&mut env, &mut rng, rand_steps)?;
        }
        Approach::Bcpp => {
            let world = env.world().ok_or(Error::NotReset)?;
            let plan = plan_bcpp(goal, cfg.footprint, world.ee.position)?;
            execute_plan(&mut env, &plan)?;
        }
    }
    let world = env.world().ok_or(Error::NotReset)?;
    let log = env.log().to_vec();
    let flags: Vec<bool> = log.iter().map(|s| s.in_medium).collect();
    let errors: Vec<f64> = log.iter().filter_map(|s| s.recon_error).collect();
    let result = EpisodeResult {
        episode,
        goal_id: goal.id.clone(),
        approach,
        height_diff: metric_height_diff(&world.map, goal)?,
        changed_pct: log.last().map_or(0.0, |s| s.changed_pct),
        execution_steps: metric_execution(&flags),
        seed,
        recon_error: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
    };
    Ok((result, log))
}

/// Runs `episodes` episodes in parallel; episode `i` uses seed `seed + i`.
/// Results come back in episode order.
pub fn run_benchmark(
    approach: Approach,
    goals: &[GoalSpec],
    episodes: usize,
    seed: u64,
    cfg: &EnvConfig,
) -> Result<Vec<EpisodeResult>> {
    (0..episodes)
        .into_par_iter()
        .map(|i| run_episode(approach, goals, cfg, i, seed.wrapping_add(i as u64)).map(|(r, _)| r))
        .collect()
}

pub const RESULTS_HEADER: [&str; 7] =
    ["episode", "goal_id", "approach", "height_diff_mm", "changed_pct", "execution_steps", "seed"];

/// Results CSV; reconstructed-mode runs carry an extra `recon_error_mm`
/// column.
pub fn write_results(path: &Path, results: &[EpisodeResult], mode: ObservationMode) -> Result<()> {
    let recon = mode == ObservationMode::Reconstructed;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header: Vec<&str> = RESULTS_HEADER.to_vec();
    if recon {
        header.push("recon_error_mm");
    }
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for r in results {
        let mut row = vec![
            r.episode.to_string(),
            r.goal_id.clone(),
            r.approach.to_string(),
            format!("{:.6}", r.height_diff * 1000.0),
            format!("{:.6}", r.changed_pct),
            r.execution_steps.to_string(),
            r.seed.to_string(),
        ];
        if recon {
            row.push(r.recon_error.map_or(String::new(), |e| format!("{:.6}", e * 1000.0)));
        }
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one numeric column from a results CSV.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::MissingColumn(column.to_string()).in_file(path))?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let field = rec.get(idx).unwrap_or("");
        let v: f64 = field.parse().map_err(|_| {
            Error::Parse {
                line: line + 2,
                msg: format!("`{field}` in column {column} is not a number"),
            }
            .in_file(path)
        })?;
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub height_diff_mm: Stat,
    pub changed_pct: Stat,
    pub execution_steps: Stat,
}

pub fn summarize(results: &[EpisodeResult]) -> Summary {
    let hd: Vec<f64> = results.iter().map(|r| r.height_diff * 1000.0).collect();
    let ch: Vec<f64> = results.iter().map(|r| r.changed_pct).collect();
    let ex: Vec<f64> = results.iter().map(|r| r.execution_steps as f64).collect();
    Summary {
        height_diff_mm: Stat::of(&hd),
        changed_pct: Stat::of(&ch),
        execution_steps: Stat::of(&ex),
    }
}

/// Metric rows with one `mean ± std` column per approach.
pub fn format_summary(columns: &[(&str, Summary)]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<20}", "Metric");
    for (name, _) in columns {
        let _ = write!(out, "{name:>16}");
    }
    out.push('\n');
    let rows: [(&str, fn(&Summary) -> Stat); 3] = [
        ("Height Diff [mm]", |s| s.height_diff_mm),
        ("Changed [%]", |s| s.changed_pct),
        ("Execution [steps]", |s| s.execution_steps),
    ];
    for (label, get) in rows {
        let _ = write!(out, "{label:<20}");
        for (_, s) in columns {
            let st = get(s);
            let _ = write!(out, "{:>16}", format!("{:.1} ± {:.1}", st.mean, st.std));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goals::ShapeFamily;

    fn rect_goal() -> GoalSpec {
        let mut map = HeightMap::flat(8, 8, 0.01, 0.06).unwrap();
        for r in 2..5 {
            for c in 2..6 {
                map.set(r, c, 0.05);
            }
        }
        GoalSpec::from_map(map, 0.06, ShapeFamily::Rectangle, "r".into(), 0).unwrap()
    }

    #[test]
    fn height_diff_and_changed_on_flat_bed() {
        let goal = rect_goal();
        let flat = HeightMap::flat(8, 8, 0.01, 0.06).unwrap();
        assert!((metric_height_diff(&flat, &goal).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(changed_pct(&flat, &goal, 0.0005).unwrap(), 0.0);
        assert_eq!(metric_height_diff(&goal.goal_map, &goal).unwrap(), 0.0);

        let mut lowered = flat.clone();
        for (r, c) in goal.mask_cells() {
            lowered.set(r, c, 0.059);
        }
        assert_eq!(changed_pct(&lowered, &goal, 0.0005).unwrap(), 100.0);
    }

    #[test]
    fn execution_rule() {
        assert_eq!(metric_execution(&[false; 10]), 0);
        let f = [true, true, false, false, false, true];
        assert_eq!(metric_execution(&f), 2);
        assert_eq!(metric_execution(&[true, false, false, true, false, false]), 6);
        assert_eq!(metric_execution(&[false, false, false, true, true, false, false, false]), 5);
    }

    #[test]
    fn mann_whitney_known_cases() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.exact);
        assert!((r.p - 0.1).abs() < 1e-15);
        let same = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(same.p, 1.0);
        let flat = mann_whitney_u(&[2.0; 20], &[2.0; 20]).unwrap();
        assert!(flat.degenerate && flat.p == 1.0);
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
    }

    #[test]
    fn mann_whitney_normal_approximation() {
        // 10 vs 10 fully separated: U = 0, z = (50 - 0.5) / sqrt(175)
        let a: Vec<f64> = (0..10).map(f64::from).collect();
        let b: Vec<f64> = (10..20).map(f64::from).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(!r.exact);
        let z: f64 = 49.5 / 175f64.sqrt();
        let expected = 2.0 * Normal::standard().sf(z);
        assert!((r.p - expected).abs() < 1e-12);
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.0005), "***");
        assert_eq!(stars(0.005), "**");
        assert_eq!(stars(0.01), "");
        assert_eq!(stars(1.0), "");
    }

    #[test]
    fn sample_std() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[7.0]).std, 0.0);
    }

    #[test]
    fn results_round_trip_and_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows: Vec<EpisodeResult> = (0..3)
            .map(|i| EpisodeResult {
                episode: i,
                goal_id: format!("g{i}"),
                approach: Approach::Rand,
                height_diff: 0.001 * i as f64,
                changed_pct: 50.0,
                execution_steps: 40,
                seed: i as u64,
                recon_error: None,
            })
            .collect();
        write_results(&path, &rows, ObservationMode::Privileged).unwrap();
        let hd = read_column(&path, "height_diff_mm").unwrap();
        assert_eq!(hd, vec![0.0, 1.0, 2.0]);
        match read_column(&path, "recon_error_mm") {
            Err(e) => assert!(e.to_string().contains("missing column `recon_error_mm`"), "{e}"),
            other => panic!("{other:?}"),
        }
    }
}
