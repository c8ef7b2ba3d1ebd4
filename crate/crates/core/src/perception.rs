//! Synthetic depth camera and height-map reconstruction from depth images.
//!
//! The camera is an ideal pinhole (x right, y down, z forward). Rendered
//! depth is the z-depth along the optical axis; pixels without a return
//! hold `NaN`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::heightfield::{pgm16_samples, HeightMap, MAX_HEIGHT};
use crate::world::{EndEffectorState, Vec3};

/// Bisection refinements after the ray march brackets a surface crossing.
const BISECTION_STEPS: usize = 10;
/// Dilation of the tool body when rejecting tool points (m).
pub const EE_DILATION: f64 = 0.01;

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    /// Camera axes in world coordinates: right, down, forward.
    pub axes: [Vec3; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Pinhole camera at `eye` looking at `target`, world `+z` up, square
    /// pixels, vertical field of view `fov_y_deg`.
    pub fn look_at(eye: Vec3, target: Vec3, width: usize, height: usize, fov_y_deg: f64) -> Self {
        let forward = normalize(sub(target, eye));
        let mut right = cross(forward, [0.0, 0.0, 1.0]);
        if dot(right, right) < 1e-12 {
            right = cross(forward, [0.0, 1.0, 0.0]);
        }
        let right = normalize(right);
        let down = cross(forward, right);
        let f = (height as f64 / 2.0) / (fov_y_deg.to_radians() / 2.0).tan();
        Self {
            position: eye,
            axes: [right, down, forward],
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    /// 128×128 camera 0.6 m above the bed, pitched 30° from vertical and
    /// aimed at the workspace center.
    pub fn default_for(extent: (f64, f64), h0: f64) -> Self {
        let (cx, cy) = (extent.0 / 2.0, extent.1 / 2.0);
        let height = 0.6;
        let offset = height * 30f64.to_radians().tan();
        Self::look_at([cx, cy - offset, h0 + height], [cx, cy, h0], 128, 128, 34.0)
    }

    /// Unit world-space direction through the center of pixel `(u, v)`.
    pub fn ray(&self, u: usize, v: usize) -> Vec3 {
        let a = (u as f64 + 0.5 - self.cx) / self.fx;
        let b = (v as f64 + 0.5 - self.cy) / self.fy;
        let [r, d, f] = self.axes;
        normalize([
            a * r[0] + b * d[0] + f[0],
            a * r[1] + b * d[1] + f[1],
            a * r[2] + b * d[2] + f[2],
        ])
    }

    /// World point seen at pixel `(u, v)` with z-depth `depth`.
    pub fn unproject(&self, u: usize, v: usize, depth: f64) -> Vec3 {
        let a = (u as f64 + 0.5 - self.cx) / self.fx * depth;
        let b = (v as f64 + 0.5 - self.cy) / self.fy * depth;
        let [r, d, f] = self.axes;
        let p = self.position;
        [
            p[0] + a * r[0] + b * d[0] + depth * f[0],
            p[1] + a * r[1] + b * d[1] + depth * f[1],
            p[2] + a * r[2] + b * d[2] + depth * f[2],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major z-depths (m); `NaN` where nothing was hit.
    pub depth: Vec<f64>,
    pub camera: Camera,
}

impl DepthImage {
    /// 16-bit PGM in millimeters; pixels without a return are 0.
    pub fn to_pgm16(&self) -> Vec<u8> {
        let samples: Vec<u16> = self
            .depth
            .iter()
            .map(|&d| if d.is_finite() { (d * 1000.0).round().clamp(0.0, 65535.0) as u16 } else { 0 })
            .collect();
        pgm16_samples(self.width, self.height, &samples)
    }
}

/// Ray parameter interval inside an axis-aligned box, if any.
fn slab(origin: Vec3, dir: Vec3, lo: Vec3, hi: Vec3) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if dir[k].abs() < 1e-15 {
            if origin[k] < lo[k] || origin[k] > hi[k] {
                return None;
            }
            continue;
        }
        let a = (lo[k] - origin[k]) / dir[k];
        let b = (hi[k] - origin[k]) / dir[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1).then_some((t0, t1))
}

/// First crossing of the ray with the bilinear bed surface.
fn march_surface(map: &HeightMap, origin: Vec3, dir: Vec3) -> Option<f64> {
    let (w, h) = map.extent();
    let (t_enter, t_exit) = slab(origin, dir, [0.0, 0.0, 0.0], [w, h, MAX_HEIGHT])?;
    let above = |t: f64| {
        let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
        p[2] - map.bilinear(p[0], p[1])
    };
    if above(t_enter) <= 0.0 {
        // entering through the side of the bed, not its top surface
        return None;
    }
    let step = map.cell_size() / 2.0;
    let mut prev = t_enter;
    loop {
        let t = (prev + step).min(t_exit);
        if above(t) <= 0.0 {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (lo + hi);
                if above(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
        if t >= t_exit {
            return None;
        }
        prev = t;
    }
}

/// Renders the bed (and the tool, if given) from `camera`. Gaussian noise
/// with standard deviation `noise.0` is added to every return.
pub fn render_depth<R: Rng>(
    map: &HeightMap,
    ee: Option<&EndEffectorState>,
    camera: &Camera,
    noise: Option<(f64, &mut R)>,
) -> Result<DepthImage> {
    let eye = camera.position;
    if eye[2] <= map.bilinear(eye[0], eye[1]) {
        return Err(Error::CameraBelowSurface);
    }
    let forward = camera.axes[2];
    let tool = ee.map(|e| e.aabb());
    let mut depth = Vec::with_capacity(camera.width * camera.height);
    for v in 0..camera.height {
        for u in 0..camera.width {
            let dir = camera.ray(u, v);
            let bed = march_surface(map, eye, dir);
            let body = tool.and_then(|(lo, hi)| slab(eye, dir, lo, hi)).map(|(t0, _)| t0);
            let t = match (bed, body) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            depth.push(t.map_or(f64::NAN, |t| t * dot(dir, forward)));
        }
    }
    if let Some((std, rng)) = noise {
        if std > 0.0 {
            let normal = Normal::new(0.0, std)
                .map_err(|e| Error::Config(format!("invalid noise std: {e}")))?;
            for d in depth.iter_mut().filter(|d| d.is_finite()) {
                *d += normal.sample(rng);
            }
        }
    }
    Ok(DepthImage {
        width: camera.width,
        height: camera.height,
        depth,
        camera: *camera,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionState {
    /// Last reconstruction; cells without returns keep these values.
    pub last_map: HeightMap,
    /// Depth noise used when rendering for this state (m).
    pub noise_std: f64,
}

impl ReconstructionState {
    pub fn new(initial: HeightMap, noise_std: f64) -> Self {
        Self {
            last_map: initial,
            noise_std,
        }
    }
}

fn inside_dilated(p: Vec3, ee: &EndEffectorState) -> bool {
    let (lo, hi) = ee.aabb();
    (0..3).all(|k| p[k] >= lo[k] - EE_DILATION && p[k] <= hi[k] + EE_DILATION)
}

/// Bins unprojected depth points into the grid of `state.last_map`. Points
/// over tool-mask cells and points on the (dilated) tool body are dropped;
/// cells left without points hold their previous value.
pub fn reconstruct(
    image: &DepthImage,
    state: &mut ReconstructionState,
    ee_mask: &[bool],
    ee: Option<&EndEffectorState>,
) -> Result<HeightMap> {
    let grid = &state.last_map;
    if image.depth.len() != image.width * image.height
        || image.width != image.camera.width
        || image.height != image.camera.height
    {
        return Err(Error::ImageMismatch(format!(
            "{}x{} image with {} samples for a {}x{} camera",
            image.width,
            image.height,
            image.depth.len(),
            image.camera.width,
            image.camera.height
        )));
    }
    if ee_mask.len() != grid.len() {
        return Err(Error::ImageMismatch(format!(
            "tool mask has {} cells, grid has {}",
            ee_mask.len(),
            grid.len()
        )));
    }
    let mut sum = vec![0.0; grid.len()];
    let mut count = vec![0u32; grid.len()];
    for v in 0..image.height {
        for u in 0..image.width {
            let d = image.depth[v * image.width + u];
            if !(d.is_finite() && d > 0.0) {
                continue;
            }
            let p = image.camera.unproject(u, v, d);
            if ee.is_some_and(|e| inside_dilated(p, e)) {
                continue;
            }
            let Some((r, c)) = grid.cell_at(p[0], p[1]) else {
                continue;
            };
            let i = grid.index(r, c);
            if ee_mask[i] {
                continue;
            }
            sum[i] += p[2];
            count[i] += 1;
        }
    }
    let heights: Vec<f64> = (0..grid.len())
        .map(|i| {
            if count[i] == 0 {
                grid.heights()[i]
            } else {
                (sum[i] / count[i] as f64).clamp(0.0, MAX_HEIGHT)
            }
        })
        .collect();
    let map = HeightMap::from_vec(grid.rows(), grid.cols(), grid.cell_size(), heights)?;
    state.last_map = map.clone();
    Ok(map)
}

/// Mean and max absolute per-cell difference between two maps.
pub fn map_error(a: &HeightMap, b: &HeightMap) -> (f64, f64) {
    let n = a.len().max(1) as f64;
    let (sum, max) = a
        .heights()
        .iter()
        .zip(b.heights())
        .map(|(x, y)| (x - y).abs())
        .fold((0.0, 0.0f64), |(s, m), e| (s + e, m.max(e)));
    (sum / n, max)
}
