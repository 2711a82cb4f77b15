use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::terrain::Terrain;
use super::{Obstacle, Scenario, WorldError};
use crate::geometry::Pose;

/// Pinhole camera looking along the body +x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub hfov: f64,
    pub width: usize,
    pub height: usize,
    pub max_range: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            hfov: 86f64.to_radians(),
            width: 120,
            height: 120,
            max_range: 6.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.hfov > 0.0 && self.hfov < std::f64::consts::PI)
            || self.width == 0
            || self.height == 0
            || !(self.max_range > 0.0)
        {
            return Err(WorldError::InvalidCamera(format!("{self:?}")));
        }
        Ok(())
    }

    /// Unit ray through the centre of pixel `(row, col)` in the camera frame.
    pub fn pixel_ray(&self, row: usize, col: usize) -> Vector3<f64> {
        let th = (self.hfov / 2.0).tan();
        let tv = th * self.height as f64 / self.width as f64;
        let u = (col as f64 + 0.5) / self.width as f64 * 2.0 - 1.0;
        let v = (row as f64 + 0.5) / self.height as f64 * 2.0 - 1.0;
        Vector3::new(1.0, -u * th, -v * tv).normalize()
    }
}

/// Per-pixel depth along the optical axis, row-major. Misses hold `max_range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub max_range: f64,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn filled(width: usize, height: usize, max_range: f64, value: f64) -> Self {
        Self {
            width,
            height,
            max_range,
            data: vec![value; width * height],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// RGB radiance in `[0, 1]`, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ClearImage {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Material {
    Seabed,
    Pillar,
    Wall,
    Slope,
}

impl Material {
    pub fn albedo(self) -> [f64; 3] {
        match self {
            Material::Seabed => [0.78, 0.70, 0.52],
            Material::Pillar => [0.62, 0.62, 0.68],
            Material::Wall => [0.50, 0.52, 0.55],
            Material::Slope => [0.60, 0.55, 0.42],
        }
    }

    fn of(o: &Obstacle) -> Self {
        match o {
            Obstacle::Cylinder { .. } => Material::Pillar,
            Obstacle::Box { .. } => Material::Wall,
            Obstacle::Slope { .. } => Material::Slope,
        }
    }
}

pub const BACKGROUND: [f64; 3] = [0.05, 0.22, 0.30];
const AMBIENT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub normal: Vector3<f64>,
    pub material: Material,
}

/// Nearest surface hit within `t_max` along a unit ray.
pub fn cast_ray(
    scenario: &Scenario,
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    t_max: f64,
) -> Option<RayHit> {
    let mut best = intersect_terrain(&scenario.terrain, o, d, t_max).map(|(t, normal)| RayHit {
        t,
        normal,
        material: Material::Seabed,
    });
    for ob in &scenario.obstacles {
        let limit = best.map_or(t_max, |b| b.t);
        if let Some(h) = ob.intersect(o, d, limit) {
            if best.is_none_or(|b| h.t < b.t) {
                best = Some(RayHit {
                    t: h.t,
                    normal: h.normal,
                    material: Material::of(ob),
                });
            }
        }
    }
    best
}

/// Depth and Lambert-shaded radiance in one pass.
pub fn render(scenario: &Scenario, pose: &Pose, cam: &CameraModel) -> (DepthImage, ClearImage) {
    let rot = pose.rotation();
    let fwd = rot * Vector3::x();
    let o = pose.position();
    let mut depth = DepthImage::filled(cam.width, cam.height, cam.max_range, cam.max_range);
    let mut clear = ClearImage::filled(cam.width, cam.height, BACKGROUND);
    for row in 0..cam.height {
        for col in 0..cam.width {
            let d = rot * cam.pixel_ray(row, col);
            let axial = d.dot(&fwd);
            if let Some(hit) = cast_ray(scenario, &o, &d, cam.max_range / axial) {
                let k = row * cam.width + col;
                depth.data[k] = (hit.t * axial).min(cam.max_range);
                let shade = AMBIENT + (1.0 - AMBIENT) * (-hit.normal.dot(&fwd)).max(0.0);
                let a = hit.material.albedo();
                for c in 0..3 {
                    clear.data[k * 3 + c] = (a[c] * shade).clamp(0.0, 1.0);
                }
            }
        }
    }
    (depth, clear)
}

pub fn raycast_depth(scenario: &Scenario, pose: &Pose, cam: &CameraModel) -> DepthImage {
    render(scenario, pose, cam).0
}

pub fn render_clear(scenario: &Scenario, pose: &Pose, cam: &CameraModel) -> ClearImage {
    render(scenario, pose, cam).1
}

/// Exact ray / bilinear-patch intersection, walking cells with a grid DDA.
pub(crate) fn intersect_terrain(
    terrain: &Terrain,
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    t_max: f64,
) -> Option<(f64, Vector3<f64>)> {
    let (x0, x1, y0, y1) = terrain.extent();
    let mut t_lo = 0.0f64;
    let mut t_hi = t_max;
    for (oc, dc, lo, hi) in [(o.x, d.x, x0, x1), (o.y, d.y, y0, y1)] {
        if dc.abs() < 1e-15 {
            if oc < lo || oc > hi {
                return None;
            }
        } else {
            let a = (lo - oc) / dc;
            let b = (hi - oc) / dc;
            t_lo = t_lo.max(a.min(b));
            t_hi = t_hi.min(a.max(b));
        }
    }
    if t_lo > t_hi {
        return None;
    }
    let cs = terrain.cell_size;
    let mid = t_lo + 1e-9 * (t_hi - t_lo).max(1e-9);
    let (mut i, mut j, _, _) = terrain.locate(o.x + mid * d.x, o.y + mid * d.y);
    let step_i: isize = if d.x > 0.0 { 1 } else { -1 };
    let step_j: isize = if d.y > 0.0 { 1 } else { -1 };
    let next_boundary = |idx: usize, step: isize, origin: f64, oc: f64, dc: f64| -> f64 {
        if dc.abs() < 1e-15 {
            return f64::INFINITY;
        }
        let edge = origin + (idx as f64 + if step > 0 { 1.0 } else { 0.0 }) * cs;
        (edge - oc) / dc
    };
    let mut t_cur = t_lo;
    loop {
        let tx = next_boundary(i, step_i, terrain.origin[0], o.x, d.x);
        let ty = next_boundary(j, step_j, terrain.origin[1], o.y, d.y);
        let t_exit = tx.min(ty).min(t_hi);
        if let Some(t) = patch_root(terrain, i, j, o, d, t_cur, t_exit) {
            let p = o + d * t;
            let (gx, gy) = terrain.gradient_clamped(p.x, p.y);
            return Some((t, Vector3::new(-gx, -gy, 1.0).normalize()));
        }
        if t_exit >= t_hi {
            return None;
        }
        if tx <= ty {
            let ni = i as isize + step_i;
            if ni < 0 || ni > terrain.nx as isize - 2 {
                return None;
            }
            i = ni as usize;
        } else {
            let nj = j as isize + step_j;
            if nj < 0 || nj > terrain.ny as isize - 2 {
                return None;
            }
            j = nj as usize;
        }
        t_cur = t_exit;
    }
}

/// Smallest `t ∈ [t0, t1]` where the ray meets the bilinear patch of cell `(i, j)`.
fn patch_root(
    terrain: &Terrain,
    i: usize,
    j: usize,
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    t0: f64,
    t1: f64,
) -> Option<f64> {
    let p = terrain.patch(i, j);
    let cs = terrain.cell_size;
    let s0 = (o.x - terrain.origin[0]) / cs - i as f64;
    let r0 = (o.y - terrain.origin[1]) / cs - j as f64;
    let sd = d.x / cs;
    let rd = d.y / cs;
    // f(t) = ray z - surface z = qa·t² + qb·t + qc
    let qa = -p.e * sd * rd;
    let qb = d.z - p.b * sd - p.c * rd - p.e * (s0 * rd + r0 * sd);
    let qc = o.z - p.a - p.b * s0 - p.c * r0 - p.e * s0 * r0;
    let eps = 1e-12;
    let accept = |t: f64| t >= t0 - eps && t <= t1 + eps && t > 0.0;
    let scale = qb.abs().max(qc.abs()).max(1e-30);
    if qa.abs() <= 1e-14 * scale {
        if qb.abs() < 1e-30 {
            return None;
        }
        let t = -qc / qb;
        return accept(t).then_some(t.clamp(t0, t1));
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (qb + qb.signum() * sq);
    let mut roots = [q / qa, if q != 0.0 { qc / q } else { f64::INFINITY }];
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots
        .into_iter()
        .find(|t| accept(*t))
        .map(|t| t.clamp(t0, t1))
}
