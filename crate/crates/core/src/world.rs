//! Kinematic cubic end-effector moving over the bed.
//!
//! The tool is an axis-aligned cuboid. Its reference point (`position`) is
//! the center of the bottom face. Moving the tool pushes every footprint
//! cell down to the tool bottom and dumps the removed material on the ring
//! of cells around the footprint, followed by a relaxation of the bed.

use crate::error::Result;
use crate::heightfield::{relax_in_place, HeightMap, ReposeConfig};

/// Tolerance for "EE bottom below the surface" contact tests (m).
pub const CONTACT_EPS: f64 = 1e-6;

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndEffectorState {
    /// Bottom-center of the tool.
    pub position: Vec3,
    pub previous_position: Vec3,
    /// Base size along x (m).
    pub footprint_width: f64,
    /// Base size along y (m).
    pub footprint_depth: f64,
    /// Tool height (m).
    pub length: f64,
}

impl EndEffectorState {
    pub fn new(position: Vec3) -> Self {
        Self {
            position,
            previous_position: position,
            footprint_width: 0.02,
            footprint_depth: 0.02,
            length: 0.15,
        }
    }

    pub fn with_footprint(mut self, width: f64, depth: f64) -> Self {
        self.footprint_width = width;
        self.footprint_depth = depth;
        self
    }

    pub fn bottom(&self) -> f64 {
        self.position[2]
    }

    /// Axis-aligned bounds `(min, max)` of the tool body.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let [x, y, z] = self.position;
        let (hw, hd) = (self.footprint_width / 2.0, self.footprint_depth / 2.0);
        ([x - hw, y - hd, z], [x + hw, y + hd, z + self.length])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkspaceConfig {
    /// Reachable x/y span starting at the grid origin (m).
    pub extent: (f64, f64),
    /// Allowed range of the tool bottom (m).
    pub z_range: (f64, f64),
    /// Displacement per unit action along each axis (m).
    pub max_step: f64,
    /// Motion substep length as a fraction of the cell size.
    pub substep_fraction: f64,
    pub contact: ContactModel,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self {
            extent: (0.32, 0.32),
            z_range: (0.005, 0.20),
            max_step: 0.04,
            substep_fraction: 0.5,
            contact: ContactModel::BowWave,
        }
    }
}

impl WorkspaceConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if !(self.max_step > 0.0) {
            return Err(Error::Config("max_step must be positive".into()));
        }
        if !(self.z_range.0 >= 0.0 && self.z_range.1 > self.z_range.0) {
            return Err(Error::Config("z_range must satisfy 0 <= z_min < z_max".into()));
        }
        if !(self.extent.0 > 0.0 && self.extent.1 > 0.0) {
            return Err(Error::Config("workspace extent must be positive".into()));
        }
        if !(self.substep_fraction > 0.0) {
            return Err(Error::Config("substep_fraction must be positive".into()));
        }
        Ok(())
    }

    pub fn clamp(&self, p: Vec3) -> Vec3 {
        [
            p[0].clamp(0.0, self.extent.0),
            p[1].clamp(0.0, self.extent.1),
            p[2].clamp(self.z_range.0, self.z_range.1),
        ]
    }

    pub fn center(&self) -> (f64, f64) {
        (self.extent.0 / 2.0, self.extent.1 / 2.0)
    }
}

/// Half-open cell index ranges `rows × cols` covered by a footprint,
/// clipped to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

impl CellRect {
    pub fn count(&self) -> usize {
        (self.rows.1 - self.rows.0) * (self.cols.1 - self.cols.0)
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.rows.0..self.rows.1).contains(&r) && (self.cols.0..self.cols.1).contains(&c)
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.rows.0..self.rows.1).flat_map(move |r| (self.cols.0..self.cols.1).map(move |c| (r, c)))
    }
}

/// Cells `i` whose centers satisfy `lo <= i + 0.5 < hi` (cell units).
fn covered_range(center: f64, size: f64, cell: f64, n: usize) -> (usize, usize) {
    let u = center / cell;
    let half = size / cell / 2.0;
    let start = ((u - half) - 0.5).ceil();
    let end = ((u + half) - 0.5).ceil();
    let clip = |v: f64| v.clamp(0.0, n as f64) as usize;
    (clip(start), clip(end))
}

/// Footprint cells under the tool (center-inside rule), or `None` when the
/// footprint misses the grid entirely.
pub fn footprint_cells(ee: &EndEffectorState, rows: usize, cols: usize, cell: f64) -> Option<CellRect> {
    let c = covered_range(ee.position[0], ee.footprint_width, cell, cols);
    let r = covered_range(ee.position[1], ee.footprint_depth, cell, rows);
    (c.0 < c.1 && r.0 < r.1).then_some(CellRect { rows: r, cols: c })
}

/// Boolean mask of the tool's xy projection.
pub fn ee_mask(ee: &EndEffectorState, rows: usize, cols: usize, cell: f64) -> Vec<bool> {
    let mut mask = vec![false; rows * cols];
    if let Some(rect) = footprint_cells(ee, rows, cols, cell) {
        for (r, c) in rect.cells() {
            mask[r * cols + c] = true;
        }
    }
    mask
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Displacement {
    /// Volume pushed out of the footprint (m³).
    pub displaced: f64,
    /// Volume lost because no ring cell could take it or the ceiling clamped.
    pub spill: f64,
}

/// Where material pushed out of the footprint goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactModel {
    /// Evenly over the whole ring of cells around the footprint.
    Ring,
    /// Over the ring cells in front of the horizontal motion (ahead of the
    /// footprint center and within half a tool width of its path); the
    /// whole ring for vertical motion or when no such cell is on the grid.
    BowWave,
}

/// Pushes footprint cells down to the tool bottom and spreads the removed
/// volume evenly over the in-grid ring of cells around the footprint.
pub fn displace(map: &mut HeightMap, ee: &EndEffectorState) -> Displacement {
    displace_toward(map, ee, None)
}

/// Like [`displace`], but with a horizontal `heading` only the ring cells
/// in front of the tool take material (see [`ContactModel::BowWave`]).
pub fn displace_toward(map: &mut HeightMap, ee: &EndEffectorState, heading: Option<(f64, f64)>) -> Displacement {
    let Some(rect) = footprint_cells(ee, map.rows(), map.cols(), map.cell_size()) else {
        return Displacement::default();
    };
    let bottom = ee.bottom();
    let area = map.cell_area();
    let mut removed_height = 0.0;
    for (r, c) in rect.cells() {
        let h = map.get(r, c);
        if h > bottom {
            removed_height += h - bottom;
            map.set(r, c, bottom);
        }
    }
    if removed_height == 0.0 {
        return Displacement::default();
    }

    let r_lo = rect.rows.0.saturating_sub(1);
    let r_hi = (rect.rows.1 + 1).min(map.rows());
    let c_lo = rect.cols.0.saturating_sub(1);
    let c_hi = (rect.cols.1 + 1).min(map.cols());
    let ring: Vec<(usize, usize)> = (r_lo..r_hi)
        .flat_map(|r| (c_lo..c_hi).map(move |c| (r, c)))
        .filter(|&(r, c)| !rect.contains(r, c))
        .collect();
    let ring = match heading {
        Some((hx, hy)) if hx != 0.0 || hy != 0.0 => {
            let (x0, y0) = (ee.position[0], ee.position[1]);
            let half_width = ee.footprint_width.max(ee.footprint_depth) / 2.0;
            let ahead: Vec<(usize, usize)> = ring
                .iter()
                .copied()
                .filter(|&(r, c)| {
                    let (x, y) = map.cell_center(r, c);
                    let (dx, dy) = (x - x0, y - y0);
                    let n = (hx * hx + hy * hy).sqrt();
                    let lateral = (dx * hy - dy * hx).abs() / n;
                    dx * hx + dy * hy > 1e-12 && lateral < half_width
                })
                .collect();
            if ahead.is_empty() {
                ring
            } else {
                ahead
            }
        }
        _ => ring,
    };

    let displaced = removed_height * area;
    if ring.is_empty() {
        return Displacement {
            displaced,
            spill: displaced,
        };
    }
    let share = removed_height / ring.len() as f64;
    let mut spill = 0.0;
    for (r, c) in ring {
        spill += map.set(r, c, map.get(r, c) + share);
    }
    Displacement { displaced, spill }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActionReport {
    pub displaced: f64,
    pub spill: f64,
    pub substeps: usize,
    pub relax_sweeps: usize,
}

#[derive(Debug, Clone)]
pub struct World {
    pub map: HeightMap,
    pub ee: EndEffectorState,
    pub workspace: WorkspaceConfig,
    pub repose: ReposeConfig,
    /// Volume destroyed by clamping since construction (m³).
    pub spill: f64,
}

impl World {
    pub fn new(
        map: HeightMap,
        ee: EndEffectorState,
        workspace: WorkspaceConfig,
        repose: ReposeConfig,
    ) -> Result<Self> {
        workspace.validate()?;
        repose.validate()?;
        let mut ee = ee;
        ee.position = workspace.clamp(ee.position);
        ee.previous_position = workspace.clamp(ee.previous_position);
        Ok(Self {
            map,
            ee,
            workspace,
            repose,
            spill: 0.0,
        })
    }

    /// Moves the tool by a normalized action. Components are clipped to
    /// `[-1, 1]` (non-finite components count as 0) and scaled by
    /// `max_step`; the target is clamped to the workspace, and the tool
    /// travels the straight segment in substeps no longer than
    /// `substep_fraction · cell_size`, displacing and relaxing after each.
    pub fn apply_action(&mut self, action: Vec3) -> Result<ActionReport> {
        let start = self.ee.position;
        let mut target = start;
        for k in 0..3 {
            let a = if action[k].is_finite() { action[k].clamp(-1.0, 1.0) } else { 0.0 };
            target[k] = start[k] + a * self.workspace.max_step;
        }
        let target = self.workspace.clamp(target);
        let report = self.move_to(target)?;
        self.ee.previous_position = start;
        Ok(report)
    }

    fn move_to(&mut self, target: Vec3) -> Result<ActionReport> {
        let start = self.ee.position;
        let length = (0..3)
            .map(|k| (target[k] - start[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        let max_sub = self.workspace.substep_fraction * self.map.cell_size();
        let substeps = if length > 0.0 {
            (length / max_sub).ceil().max(1.0) as usize
        } else {
            0
        };
        let mut report = ActionReport {
            substeps,
            ..Default::default()
        };
        for s in 1..=substeps {
            self.ee.position = if s == substeps {
                target
            } else {
                let f = s as f64 / substeps as f64;
                [
                    start[0] + (target[0] - start[0]) * f,
                    start[1] + (target[1] - start[1]) * f,
                    start[2] + (target[2] - start[2]) * f,
                ]
            };
            let heading = match self.workspace.contact {
                ContactModel::Ring => None,
                ContactModel::BowWave => Some((target[0] - start[0], target[1] - start[1])),
            };
            let d = displace_toward(&mut self.map, &self.ee, heading);
            let stats = relax_in_place(&mut self.map, &self.repose)?;
            report.displaced += d.displaced;
            report.spill += d.spill + stats.spill;
            report.relax_sweeps += stats.sweeps;
        }
        self.spill += report.spill;
        Ok(report)
    }

    /// Places the tool without touching the bed.
    pub fn teleport(&mut self, position: Vec3) {
        let p = self.workspace.clamp(position);
        self.ee.position = p;
        self.ee.previous_position = p;
    }

    pub fn ee_mask(&self) -> Vec<bool> {
        ee_mask(&self.ee, self.map.rows(), self.map.cols(), self.map.cell_size())
    }

    /// True when the tool bottom is at or below the surface of any
    /// footprint cell.
    pub fn ee_in_medium(&self) -> bool {
        footprint_cells(&self.ee, self.map.rows(), self.map.cols(), self.map.cell_size())
            .map(|rect| {
                rect.cells()
                    .any(|(r, c)| self.ee.bottom() < self.map.get(r, c) + CONTACT_EPS)
            })
            .unwrap_or(false)
    }
}
