//! Dense height-map representation of the granular bed and the
//! angle-of-repose relaxation that keeps it physically plausible.
//!
//! All lengths are meters. Heights are stored row-major; cell `(r, c)` covers
//! `x ∈ [c·s, (c+1)·s)`, `y ∈ [r·s, (r+1)·s)` for cell size `s`.

mod ghm;

pub(crate) use ghm::pgm16 as pgm16_samples;
pub use ghm::{parse_ghm, parse_ghm_body, read_ghm, write_ghm, write_ghm_file, write_pgm16, Ghm};

use crate::error::{Error, Result};

/// Elevation ceiling of the bed (and of every height map in the system).
pub const MAX_HEIGHT: f64 = 0.20;

/// Default cell edge length (1 cm).
pub const DEFAULT_CELL_SIZE: f64 = 0.01;

/// Neighbour offsets that visit every unordered 8-adjacent pair exactly once.
const HALF_NEIGHBOURHOOD: [(isize, isize, bool); 4] = [
    (0, 1, false),
    (1, 0, false),
    (1, 1, true),
    (1, -1, true),
];

#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    rows: usize,
    cols: usize,
    cell_size: f64,
    heights: Vec<f64>,
}

impl HeightMap {
    pub fn flat(rows: usize, cols: usize, cell_size: f64, height: f64) -> Result<Self> {
        Self::from_vec(rows, cols, cell_size, vec![height; rows * cols])
    }

    pub fn from_vec(rows: usize, cols: usize, cell_size: f64, heights: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidMap("rows and cols must be at least 1".into()));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidMap(format!("cell size {cell_size} must be positive")));
        }
        if heights.len() != rows * cols {
            return Err(Error::InvalidMap(format!(
                "expected {} heights, got {}",
                rows * cols,
                heights.len()
            )));
        }
        if let Some((i, h)) = heights
            .iter()
            .enumerate()
            .find(|(_, h)| !(0.0..=MAX_HEIGHT).contains(*h))
        {
            return Err(Error::InvalidMap(format!(
                "height {h} at cell ({}, {}) outside [0, {MAX_HEIGHT}]",
                i / cols,
                i % cols
            )));
        }
        Ok(Self {
            rows,
            cols,
            cell_size,
            heights,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.heights[row * self.cols + col]
    }

    /// Sets a cell, clamping into `[0, MAX_HEIGHT]`. Returns the volume lost
    /// (positive) or created (negative) by the clamp.
    pub fn set(&mut self, row: usize, col: usize, h: f64) -> f64 {
        let clamped = h.clamp(0.0, MAX_HEIGHT);
        self.heights[row * self.cols + col] = clamped;
        (h - clamped) * self.cell_area()
    }

    pub fn same_grid(&self, other: &HeightMap) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    /// World-space extent `(x, y)` covered by the grid.
    pub fn extent(&self) -> (f64, f64) {
        (self.cols as f64 * self.cell_size, self.rows as f64 * self.cell_size)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) * self.cell_size,
            (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Total material volume `Σ h · s²`.
    pub fn volume(&self) -> f64 {
        self.heights.iter().sum::<f64>() * self.cell_area()
    }

    pub fn min_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Height of the bilinear surface through the cell centers. Outside the
    /// outermost centers the surface is extended as a constant.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let u = (x / self.cell_size - 0.5).clamp(0.0, (self.cols - 1) as f64);
        let v = (y / self.cell_size - 0.5).clamp(0.0, (self.rows - 1) as f64);
        let c0 = (u.floor() as usize).min(self.cols.saturating_sub(2));
        let r0 = (v.floor() as usize).min(self.rows.saturating_sub(2));
        let c1 = (c0 + 1).min(self.cols - 1);
        let r1 = (r0 + 1).min(self.rows - 1);
        let fu = u - c0 as f64;
        let fv = v - r0 as f64;
        let top = self.get(r0, c0) * (1.0 - fu) + self.get(r0, c1) * fu;
        let bottom = self.get(r1, c0) * (1.0 - fu) + self.get(r1, c1) * fu;
        top * (1.0 - fv) + bottom * fv
    }

    /// Cell containing world point `(x, y)`, if any.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = (x / self.cell_size).floor();
        let r = (y / self.cell_size).floor();
        if c < 0.0 || r < 0.0 || c >= self.cols as f64 || r >= self.rows as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    /// Quarter turn: cell `(r, c)` moves to `(c, rows - 1 - r)`.
    pub fn rotated(&self) -> HeightMap {
        let mut heights = vec![0.0; self.heights.len()];
        let new_cols = self.rows;
        for r in 0..self.rows {
            for c in 0..self.cols {
                heights[c * new_cols + (self.rows - 1 - r)] = self.get(r, c);
            }
        }
        HeightMap {
            rows: self.cols,
            cols: self.rows,
            cell_size: self.cell_size,
            heights,
        }
    }

    /// Mirror across the vertical axis: `(r, c)` moves to `(r, cols - 1 - c)`.
    pub fn mirrored(&self) -> HeightMap {
        let mut heights = self.heights.clone();
        for row in heights.chunks_mut(self.cols) {
            row.reverse();
        }
        HeightMap { heights, ..*self }
    }

    pub fn max_abs_diff(&self, other: &HeightMap) -> f64 {
        self.heights
            .iter()
            .zip(&other.heights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReposeConfig {
    /// Angle of repose in radians.
    pub angle_repose: f64,
    /// Fraction of the pairwise excess moved per sweep.
    pub transfer_gain: f64,
    /// Residual slope excess (m) accepted as converged.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for ReposeConfig {
    fn default() -> Self {
        Self {
            angle_repose: 35f64.to_radians(),
            transfer_gain: 0.25,
            tolerance: 1e-5,
            max_sweeps: 10_000,
        }
    }
}

impl ReposeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.angle_repose > 0.0 && self.angle_repose < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config(format!(
                "angle of repose {} rad outside (0, pi/2)",
                self.angle_repose
            )));
        }
        if !(self.transfer_gain > 0.0 && self.transfer_gain <= 1.0) {
            return Err(Error::Config(format!(
                "transfer gain {} outside (0, 1]",
                self.transfer_gain
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Config("max_sweeps must be at least 1".into()));
        }
        Ok(())
    }

    /// Largest stable height drop between orthogonal and diagonal neighbours.
    fn stable_drops(&self, cell_size: f64) -> (f64, f64) {
        let t = self.angle_repose.tan();
        (cell_size * t, cell_size * std::f64::consts::SQRT_2 * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelaxStats {
    pub sweeps: usize,
    /// Volume removed by the `[0, MAX_HEIGHT]` clamp (m³).
    pub spill: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relaxed {
    pub map: HeightMap,
    pub stats: RelaxStats,
}

/// Relaxes a copy of `map` until no 8-adjacent pair exceeds the angle of repose.
pub fn relax(map: &HeightMap, cfg: &ReposeConfig) -> Result<Relaxed> {
    let mut map = map.clone();
    let stats = relax_in_place(&mut map, cfg)?;
    Ok(Relaxed { map, stats })
}

/// Jacobi relaxation: every sweep computes all pairwise transfers
/// `q = k · (Δh − d·tan θ) / 2` against the same snapshot and applies them
/// together, so the result does not depend on traversal order.
///
/// For `k ≤ 0.25` a cell can lose at most its full excess over the lowest
/// neighbour, which keeps every cell inside the input's `[min, max]` range.
pub fn relax_in_place(map: &mut HeightMap, cfg: &ReposeConfig) -> Result<RelaxStats> {
    cfg.validate()?;
    let (rows, cols) = (map.rows, map.cols);
    let (drop_orth, drop_diag) = cfg.stable_drops(map.cell_size);
    let half_gain = 0.5 * cfg.transfer_gain;
    let mut delta = vec![0.0; map.heights.len()];
    let mut stats = RelaxStats::default();

    loop {
        let mut residual = 0.0f64;
        delta.iter_mut().for_each(|d| *d = 0.0);
        let h = &map.heights;
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                let hi = h[i];
                for &(dr, dc, diagonal) in &HALF_NEIGHBOURHOOD {
                    let nr = r as isize + dr;
                    let nc = c as isize + dc;
                    if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                        continue;
                    }
                    let j = nr as usize * cols + nc as usize;
                    let diff = hi - h[j];
                    let excess = diff.abs() - if diagonal { drop_diag } else { drop_orth };
                    if excess > 0.0 {
                        residual = residual.max(excess);
                        let q = half_gain * excess * diff.signum();
                        delta[i] -= q;
                        delta[j] += q;
                    }
                }
            }
        }
        if residual <= cfg.tolerance {
            return Ok(stats);
        }
        if stats.sweeps >= cfg.max_sweeps {
            return Err(Error::NotConverged {
                sweeps: stats.sweeps,
                residual,
            });
        }
        let area = map.cell_area();
        for (h, d) in map.heights.iter_mut().zip(&delta) {
            let next = *h + d;
            let clamped = next.clamp(0.0, MAX_HEIGHT);
            stats.spill += (next - clamped) * area;
            *h = clamped;
        }
        stats.sweeps += 1;
    }
}

/// Total material volume of `map` (m³).
pub fn volume(map: &HeightMap) -> f64 {
    map.volume()
}

/// Largest amount (m) by which any 8-adjacent pair exceeds the stable drop.
/// Zero means the map is at rest.
pub fn max_slope_violation(map: &HeightMap, cfg: &ReposeConfig) -> f64 {
    let (drop_orth, drop_diag) = cfg.stable_drops(map.cell_size);
    let mut worst = 0.0f64;
    for r in 0..map.rows {
        for c in 0..map.cols {
            let hi = map.get(r, c);
            for &(dr, dc, diagonal) in &HALF_NEIGHBOURHOOD {
                let nr = r as isize + dr;
                let nc = c as isize + dc;
                if nr < 0 || nc < 0 || nr >= map.rows as isize || nc >= map.cols as isize {
                    continue;
                }
                let diff = (hi - map.get(nr as usize, nc as usize)).abs();
                let stable = if diagonal { drop_diag } else { drop_orth };
                worst = worst.max(diff - stable);
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ReposeConfig {
        ReposeConfig::default()
    }

    #[test]
    fn flat_map_needs_no_sweeps() {
        let map = HeightMap::flat(8, 8, 0.01, 0.06).unwrap();
        let out = relax(&map, &cfg()).unwrap();
        assert_eq!(out.stats.sweeps, 0);
        assert_eq!(out.map, map);
        assert_eq!(max_slope_violation(&map, &cfg()), 0.0);
    }

    #[test]
    fn two_cell_equilibrium() {
        let map = HeightMap::from_vec(1, 2, 0.01, vec![0.10, 0.06]).unwrap();
        let c = cfg();
        let stable = 0.01 * c.angle_repose.tan();
        assert!((max_slope_violation(&map, &c) - (0.04 - stable)).abs() < 1e-12);
        assert!((max_slope_violation(&map, &c) - 0.0330).abs() < 1e-4);

        let out = relax(&map, &c).unwrap();
        let (h0, h1) = (out.map.get(0, 0), out.map.get(0, 1));
        assert!(h0 - h1 <= stable + c.tolerance);
        assert!((h0 + h1 - 0.16).abs() < 1e-15);
        assert!((h0 - (0.08 + stable / 2.0)).abs() < c.tolerance);
        assert!((h1 - (0.08 - stable / 2.0)).abs() < c.tolerance);
    }

    #[test]
    fn volume_by_hand() {
        assert_eq!(HeightMap::flat(3, 3, 0.01, 0.0).unwrap().volume(), 0.0);
        let v = HeightMap::flat(2, 2, 0.01, 0.06).unwrap().volume();
        assert!((v - 2.4e-5).abs() < 1e-18);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let map = HeightMap::from_vec(1, 2, 0.01, vec![0.10, 0.06]).unwrap();
        let c = ReposeConfig {
            max_sweeps: 2,
            ..cfg()
        };
        match relax(&map, &c) {
            Err(Error::NotConverged { sweeps, residual }) => {
                assert_eq!(sweeps, 2);
                assert!(residual > c.tolerance);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_maps_and_configs() {
        assert!(HeightMap::flat(0, 3, 0.01, 0.0).is_err());
        assert!(HeightMap::flat(2, 2, 0.0, 0.0).is_err());
        assert!(HeightMap::flat(2, 2, 0.01, 0.21).is_err());
        assert!(HeightMap::flat(2, 2, 0.01, -0.01).is_err());
        let bad = ReposeConfig {
            angle_repose: 0.0,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let bad = ReposeConfig {
            transfer_gain: 1.5,
            ..cfg()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ceiling_clamp_is_reported_as_spill() {
        let mut map = HeightMap::flat(1, 1, 0.01, 0.19).unwrap();
        let lost = map.set(0, 0, 0.25);
        assert_eq!(map.get(0, 0), MAX_HEIGHT);
        assert!((lost - 0.05 * 1e-4).abs() < 1e-15);
    }

    #[test]
    fn bilinear_reproduces_a_plane_between_centers() {
        let (rows, cols, s) = (6, 7, 0.01);
        let heights = (0..rows * cols)
            .map(|i| {
                let (x, y) = ((i % cols) as f64 * s + s / 2.0, (i / cols) as f64 * s + s / 2.0);
                0.05 + 0.2 * x + 0.1 * y
            })
            .collect();
        let map = HeightMap::from_vec(rows, cols, s, heights).unwrap();
        for &(x, y) in &[(0.012, 0.021), (0.0555, 0.031), (0.03, 0.05)] {
            let expected = 0.05 + 0.2 * x + 0.1 * y;
            assert!((map.bilinear(x, y) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_four_times_is_identity() {
        let map = HeightMap::from_vec(2, 3, 0.01, vec![0.01, 0.02, 0.03, 0.04, 0.05, 0.06]).unwrap();
        let r = map.rotated();
        assert_eq!((r.rows(), r.cols()), (3, 2));
        assert_eq!(r.get(0, 1), map.get(0, 0));
        assert_eq!(r.rotated().rotated().rotated(), map);
        assert_eq!(map.mirrored().mirrored(), map);
    }
}
