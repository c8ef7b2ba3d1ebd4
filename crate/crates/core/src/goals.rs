//! Goal height maps: procedural shape families, validation and file I/O.
//!
//! A goal only ever lowers the bed. Its mask marks the cells whose goal
//! height differs from the initial bed height `h0`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::heightfield::{parse_ghm_body, write_ghm, HeightMap};

/// Cells differing from `h0` by more than this are goal cells (m).
pub const MASK_EPS: f64 = 1e-7;
/// Deepest allowed imprint (m).
pub const MAX_GOAL_DEPTH: f64 = 0.03;
/// Largest goal bounding box side (cells).
pub const MAX_GOAL_CELLS: usize = 10;
/// Rejection-sampling budget per goal.
/// Goal depth range, whole millimeters.
pub const GOAL_DEPTH_MM: (u32, u32) = (5, 15);
/// Minimum depth difference between a terrace and its surround (mm).
pub const TERRACE_STEP_MM: u32 = 3;
pub const MAX_ATTEMPTS: usize = 100;
/// Tool footprint width in cells used by the single-stroke test.
pub const STROKE_WIDTH_CELLS: usize = 2;
/// Cells kept free between the goal and the grid border.
const PLACEMENT_MARGIN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeFamily {
    Rectangle,
    LShape,
    Polygon,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 3] = [ShapeFamily::Rectangle, ShapeFamily::LShape, ShapeFamily::Polygon];

    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeFamily::Rectangle => "rectangle",
            ShapeFamily::LShape => "l_shape",
            ShapeFamily::Polygon => "polygon",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            ShapeFamily::Rectangle => 0x5245_4354,
            ShapeFamily::LShape => 0x4c53_4850,
            ShapeFamily::Polygon => 0x504f_4c59,
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectangle" => Ok(ShapeFamily::Rectangle),
            "l_shape" => Ok(ShapeFamily::LShape),
            "polygon" => Ok(ShapeFamily::Polygon),
            other => Err(Error::Config(format!(
                "unknown goal family `{other}` (expected rectangle, l_shape or polygon)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 32,
            cell_size: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSpec {
    pub goal_map: HeightMap,
    pub goal_mask: Vec<bool>,
    pub family: ShapeFamily,
    pub id: String,
    pub h0: f64,
    pub seed: u64,
}

impl GoalSpec {
    /// Builds a goal from a height map, deriving the mask.
    pub fn from_map(goal_map: HeightMap, h0: f64, family: ShapeFamily, id: String, seed: u64) -> Result<Self> {
        let goal_mask = goal_map
            .heights()
            .iter()
            .map(|h| (h - h0).abs() > MASK_EPS)
            .collect();
        let spec = Self {
            goal_map,
            goal_mask,
            family,
            id,
            h0,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rows(&self) -> usize {
        self.goal_map.rows()
    }

    pub fn cols(&self) -> usize {
        self.goal_map.cols()
    }

    pub fn mask_count(&self) -> usize {
        self.goal_mask.iter().filter(|&&m| m).count()
    }

    pub fn mask_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.cols();
        self.goal_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(i, _)| (i / cols, i % cols))
    }

    /// Mask bounding box as `(row_min, row_max, col_min, col_max)`, inclusive.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        mask_bbox(&self.goal_mask, self.cols())
    }

    pub fn validate(&self) -> Result<()> {
        let cols = self.cols();
        if self.goal_mask.len() != self.goal_map.len() {
            return Err(Error::InvalidGoal("mask and map sizes differ".into()));
        }
        for (i, (&h, &m)) in self.goal_map.heights().iter().zip(&self.goal_mask).enumerate() {
            if ((h - self.h0).abs() > MASK_EPS) != m {
                return Err(Error::MaskInconsistent {
                    row: i / cols,
                    col: i % cols,
                });
            }
            if h > self.h0 + MASK_EPS {
                return Err(Error::InvalidGoal(format!(
                    "cell ({}, {}) raises material above h0",
                    i / cols,
                    i % cols
                )));
            }
            if self.h0 - h > MAX_GOAL_DEPTH + MASK_EPS {
                return Err(Error::InvalidGoal(format!(
                    "cell ({}, {}) deeper than {} m",
                    i / cols,
                    i % cols,
                    MAX_GOAL_DEPTH
                )));
            }
        }
        let (r0, r1, c0, c1) = self.bounding_box().ok_or(Error::EmptyMask)?;
        if r1 - r0 + 1 > MAX_GOAL_CELLS || c1 - c0 + 1 > MAX_GOAL_CELLS {
            return Err(Error::InvalidGoal(format!(
                "goal area {}x{} cells exceeds {MAX_GOAL_CELLS}x{MAX_GOAL_CELLS}",
                r1 - r0 + 1,
                c1 - c0 + 1
            )));
        }
        Ok(())
    }
}

fn mask_bbox(mask: &[bool], cols: usize) -> Option<(usize, usize, usize, usize)> {
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (r, c) = (i / cols, i % cols);
        bbox = Some(match bbox {
            None => (r, r, c, c),
            Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
        });
    }
    bbox
}

/// Labels 8-connected components of `mask`; returns one cell list per region
/// in order of their first cell in row-major order.
pub fn connected_regions(mask: &[bool], rows: usize, cols: usize) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; mask.len()];
    let mut regions = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut region = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (r, c) = (i / cols, i % cols);
            region.push((r, c));
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                        continue;
                    }
                    let j = nr as usize * cols + nc as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        region.sort_unstable();
        regions.push(region);
    }
    regions
}

/// True when one straight pass of the tool reproduces the goal: the mask is a
/// filled strip at most `STROKE_WIDTH_CELLS` wide at a single depth.
pub fn is_single_stroke(goal: &GoalSpec) -> bool {
    let Some((r0, r1, c0, c1)) = goal.bounding_box() else {
        return false;
    };
    let (h, w) = (r1 - r0 + 1, c1 - c0 + 1);
    if h.min(w) > STROKE_WIDTH_CELLS || goal.mask_count() != h * w {
        return false;
    }
    let mut depths = goal.mask_cells().map(|(r, c)| goal.goal_map.get(r, c));
    let first = depths.next().unwrap_or(goal.h0);
    depths.all(|d| (d - first).abs() <= MASK_EPS)
}

/// Local shape before placement: a small raster of depths (0 = untouched).
struct Stamp {
    rows: usize,
    cols: usize,
    depth: Vec<f64>,
}

fn depth_mm(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> f64 {
    rng.random_range(lo..=hi) as f64 / 1000.0
}

fn sample_rectangle(rng: &mut ChaCha8Rng) -> Stamp {
    let rows = rng.random_range(3..=MAX_GOAL_CELLS);
    let cols = rng.random_range(3..=MAX_GOAL_CELLS);
    let d = depth_mm(rng, GOAL_DEPTH_MM.0, GOAL_DEPTH_MM.1);
    Stamp {
        rows,
        cols,
        depth: vec![d; rows * cols],
    }
}

fn sample_l_shape(rng: &mut ChaCha8Rng) -> Stamp {
    let rows = rng.random_range(5..=MAX_GOAL_CELLS);
    let cols = rng.random_range(5..=MAX_GOAL_CELLS);
    // vertical arm: columns [0, arm_w); horizontal arm: rows [rows - arm_h, rows)
    let arm_w = rng.random_range(2..=cols - 2);
    let arm_h = rng.random_range(2..=rows - 2);
    let d = depth_mm(rng, GOAL_DEPTH_MM.0, GOAL_DEPTH_MM.1);
    let mut depth = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            if c < arm_w || r >= rows - arm_h {
                depth[r * cols + c] = d;
            }
        }
    }
    let mut stamp = Stamp { rows, cols, depth };
    for _ in 0..rng.random_range(0..4) {
        stamp = rotate_stamp(&stamp);
    }
    stamp
}

fn rotate_stamp(s: &Stamp) -> Stamp {
    let mut depth = vec![0.0; s.depth.len()];
    for r in 0..s.rows {
        for c in 0..s.cols {
            depth[c * s.rows + (s.rows - 1 - r)] = s.depth[r * s.cols + c];
        }
    }
    Stamp {
        rows: s.cols,
        cols: s.rows,
        depth,
    }
}

fn point_in_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Star-convex polygon with 5–8 vertices and radii in 1.5–5 cells, rasterized
/// by cell centers. Half of the polygons get a deeper inner terrace.
fn sample_polygon(rng: &mut ChaCha8Rng) -> Stamp {
    let n = rng.random_range(5..=8usize);
    let sector = std::f64::consts::TAU / n as f64;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    // center in local cell units; the raster covers [0, 10) on both axes
    let (cx, cy) = (5.0 + rng.random_range(-0.5..0.5), 5.0 + rng.random_range(-0.5..0.5));
    let vertices: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let a = phase + sector * (i as f64 + rng.random_range(-0.3..0.3));
            let radius = rng.random_range(1.5..5.0);
            (cx + radius * a.cos(), cy + radius * a.sin())
        })
        .collect();
    let terrace = rng.random_bool(0.5);
    let (outer, inner) = if terrace {
        let (lo, hi) = GOAL_DEPTH_MM;
        let outer_mm = rng.random_range(lo..=hi - TERRACE_STEP_MM);
        let inner_mm = rng.random_range(outer_mm + TERRACE_STEP_MM..=hi);
        (outer_mm as f64 / 1000.0, inner_mm as f64 / 1000.0)
    } else {
        let d = depth_mm(rng, GOAL_DEPTH_MM.0, GOAL_DEPTH_MM.1);
        (d, d)
    };
    let inner_poly: Vec<(f64, f64)> = vertices
        .iter()
        .map(|&(x, y)| (cx + 0.5 * (x - cx), cy + 0.5 * (y - cy)))
        .collect();
    let size = MAX_GOAL_CELLS;
    let mut depth = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            if point_in_polygon(x, y, &vertices) {
                depth[r * size + c] = if point_in_polygon(x, y, &inner_poly) { inner } else { outer };
            }
        }
    }
    Stamp {
        rows: size,
        cols: size,
        depth,
    }
}

/// Trims empty border rows/columns.
fn crop(stamp: Stamp) -> Option<Stamp> {
    let mask: Vec<bool> = stamp.depth.iter().map(|&d| d > 0.0).collect();
    let (r0, r1, c0, c1) = mask_bbox(&mask, stamp.cols)?;
    let (rows, cols) = (r1 - r0 + 1, c1 - c0 + 1);
    let mut depth = Vec::with_capacity(rows * cols);
    for r in r0..=r1 {
        depth.extend_from_slice(&stamp.depth[r * stamp.cols + c0..=r * stamp.cols + c1]);
    }
    Some(Stamp { rows, cols, depth })
}

fn family_rng(family: ShapeFamily, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ family.tag().rotate_left(32))
}

/// Samples a goal of the given family. Deterministic in `(family, seed, grid, h0)`.
pub fn gen_goal(family: ShapeFamily, seed: u64, grid: GridSpec, h0: f64) -> Result<GoalSpec> {
    let mut rng = family_rng(family, seed);
    let id = format!("{family}-{seed}");
    for _ in 0..MAX_ATTEMPTS {
        let stamp = match family {
            ShapeFamily::Rectangle => sample_rectangle(&mut rng),
            ShapeFamily::LShape => sample_l_shape(&mut rng),
            ShapeFamily::Polygon => sample_polygon(&mut rng),
        };
        let Some(stamp) = crop(stamp) else { continue };
        let margin = PLACEMENT_MARGIN.min(grid.rows.saturating_sub(stamp.rows) / 2)
            .min(grid.cols.saturating_sub(stamp.cols) / 2);
        if stamp.rows + 2 * margin > grid.rows || stamp.cols + 2 * margin > grid.cols {
            continue;
        }
        let row0 = rng.random_range(margin..=grid.rows - margin - stamp.rows);
        let col0 = rng.random_range(margin..=grid.cols - margin - stamp.cols);
        let mut heights = vec![h0; grid.rows * grid.cols];
        for r in 0..stamp.rows {
            for c in 0..stamp.cols {
                let d = stamp.depth[r * stamp.cols + c];
                if d > 0.0 {
                    heights[(row0 + r) * grid.cols + col0 + c] = h0 - d;
                }
            }
        }
        let map = HeightMap::from_vec(grid.rows, grid.cols, grid.cell_size, heights)?;
        let Ok(goal) = GoalSpec::from_map(map, h0, family, id.clone(), seed) else {
            continue;
        };
        if connected_regions(&goal.goal_mask, grid.rows, grid.cols).len() != 1 || is_single_stroke(&goal) {
            continue;
        }
        return Ok(goal);
    }
    Err(Error::GoalGeneration {
        family: family.to_string(),
        attempts: MAX_ATTEMPTS,
    })
}

/// Serializes a goal: GHM block, `MASK` block, metadata comment.
pub fn write_goal(goal: &GoalSpec) -> String {
    let mut out = write_ghm(&goal.goal_map, goal.h0);
    out.push_str("MASK\n");
    for row in goal.goal_mask.chunks(goal.cols()) {
        let line: Vec<&str> = row.iter().map(|&m| if m { "1" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out.push_str(&format!("# family={} seed={}\n", goal.family, goal.seed));
    out
}

pub fn save_goal(goal: &GoalSpec, path: &Path) -> Result<()> {
    std::fs::write(path, write_goal(goal)).map_err(|e| Error::io(path, e))
}

pub fn parse_goal(text: &str, id: &str) -> Result<GoalSpec> {
    let lines: Vec<&str> = text.lines().collect();
    let (ghm, mut next) = parse_ghm_body(&lines, 0)?;
    let (rows, cols) = (ghm.map.rows(), ghm.map.cols());
    let parse_err = |line: usize, msg: String| Error::Parse { line: line + 1, msg };

    if lines.get(next).map(|l| l.trim()) != Some("MASK") {
        return Err(parse_err(next, "expected `MASK` section".into()));
    }
    next += 1;
    let mut mask = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let ln = next + r;
        let line = lines
            .get(ln)
            .ok_or_else(|| parse_err(ln, format!("expected {rows} mask rows, found {r}")))?;
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != cols {
            return Err(parse_err(ln, format!("expected {cols} mask values, found {}", values.len())));
        }
        for v in values {
            mask.push(match v {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(ln, format!("invalid mask value `{other}`"))),
            });
        }
    }
    next += rows;

    let mut family = None;
    let mut seed = None;
    for (i, line) in lines.iter().enumerate().skip(next) {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let Some(meta) = t.strip_prefix('#') else {
            return Err(parse_err(i, "unexpected content after mask".into()));
        };
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("family", f)) => family = Some(f.parse::<ShapeFamily>().map_err(|e| parse_err(i, e.to_string()))?),
                Some(("seed", s)) => {
                    seed = Some(s.parse::<u64>().map_err(|_| parse_err(i, format!("invalid seed `{s}`")))?)
                }
                _ => {}
            }
        }
    }
    let family = family.ok_or_else(|| parse_err(lines.len().max(1) - 1, "missing `# family=` metadata".into()))?;

    let goal = GoalSpec {
        goal_map: ghm.map,
        goal_mask: mask,
        family,
        id: id.to_string(),
        h0: ghm.h0,
        seed: seed.unwrap_or(0),
    };
    goal.validate()?;
    Ok(goal)
}

pub fn load_goal(path: &Path) -> Result<GoalSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("goal")
        .to_string();
    parse_goal(&text, &id).map_err(|e| e.in_file(path))
}

/// `goals/<family>/<id>.ghm`
pub fn goal_path(root: &Path, goal: &GoalSpec) -> PathBuf {
    root.join(goal.family.as_str()).join(format!("{}.ghm", goal.id))
}

/// Loads every `*.ghm` below `root/<family>/`, sorted by path.
pub fn load_goal_dir(root: &Path) -> Result<Vec<GoalSpec>> {
    let mut paths = Vec::new();
    for family in ShapeFamily::ALL {
        let dir = root.join(family.as_str());
        if !dir.is_dir() {
            continue;
        }
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("ghm") {
                paths.push(path);
            }
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no goal files found under {}", root.display())));
    }
    paths.iter().map(|p| load_goal(p)).collect()
}
