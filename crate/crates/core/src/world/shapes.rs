use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::WorldError;

/// Static obstacle. Heights and positions are in world meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Obstacle {
    /// Vertical cylinder spanning `[base, base + height]`.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        base: f64,
        height: f64,
    },
    /// Box rotated by `yaw` about +z; `half_extents` are in its own frame.
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        yaw: f64,
    },
    /// Wedge on a rectangular footprint rising along its local +x axis at `incline` radians.
    Slope {
        center: [f64; 2],
        half_size: [f64; 2],
        base: f64,
        yaw: f64,
        incline: f64,
    },
}

/// Half-space `normal · p <= offset`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ShapeHit {
    pub t: f64,
    pub normal: Vector3<f64>,
}

impl Obstacle {
    pub fn validate(&self) -> Result<(), WorldError> {
        let ok = match self {
            Obstacle::Cylinder { radius, height, .. } => *radius > 0.0 && *height > 0.0,
            Obstacle::Box { half_extents, .. } => half_extents.iter().all(|e| *e > 0.0),
            Obstacle::Slope {
                half_size, incline, ..
            } => half_size.iter().all(|e| *e > 0.0) && *incline > 0.0 && *incline < 1.5,
        };
        if ok {
            Ok(())
        } else {
            Err(WorldError::InvalidObstacle(format!("{self:?}")))
        }
    }

    /// Lowest z of the obstacle.
    pub fn base(&self) -> f64 {
        match self {
            Obstacle::Cylinder { base, .. } | Obstacle::Slope { base, .. } => *base,
            Obstacle::Box {
                center,
                half_extents,
                ..
            } => center[2] - half_extents[2],
        }
    }

    /// Horizontal footprint centre.
    pub fn center_xy(&self) -> [f64; 2] {
        match self {
            Obstacle::Cylinder { center, .. } | Obstacle::Slope { center, .. } => *center,
            Obstacle::Box { center, .. } => [center[0], center[1]],
        }
    }

    fn planes(&self) -> Vec<Plane> {
        let (center, yaw, local): ([f64; 3], f64, Vec<(Vector3<f64>, f64)>) = match self {
            Obstacle::Cylinder { .. } => return Vec::new(),
            Obstacle::Box {
                center,
                half_extents: h,
                yaw,
            } => (
                *center,
                *yaw,
                vec![
                    (Vector3::x(), h[0]),
                    (-Vector3::x(), h[0]),
                    (Vector3::y(), h[1]),
                    (-Vector3::y(), h[1]),
                    (Vector3::z(), h[2]),
                    (-Vector3::z(), h[2]),
                ],
            ),
            Obstacle::Slope {
                center,
                half_size: h,
                base,
                yaw,
                incline,
            } => {
                let tn = incline.tan();
                // z - base <= (x + hx)·tan  ⇔  -tan·x + z <= hx·tan  (local, origin at base centre)
                let n = Vector3::new(-tn, 0.0, 1.0);
                let len = n.norm();
                (
                    [center[0], center[1], *base],
                    *yaw,
                    vec![
                        (Vector3::x(), h[0]),
                        (-Vector3::x(), h[0]),
                        (Vector3::y(), h[1]),
                        (-Vector3::y(), h[1]),
                        (-Vector3::z(), 0.0),
                        (n / len, h[0] * tn / len),
                    ],
                )
            }
        };
        let (s, c) = yaw.sin_cos();
        let origin = Vector3::new(center[0], center[1], center[2]);
        local
            .into_iter()
            .map(|(n, d)| {
                let nw = Vector3::new(c * n.x - s * n.y, s * n.x + c * n.y, n.z);
                Plane {
                    normal: nw,
                    offset: d + nw.dot(&origin),
                }
            })
            .collect()
    }

    /// Signed distance from `p` to the surface (negative inside).
    ///
    /// Exact for cylinders and boxes. For slopes it is the largest plane
    /// distance, which is exact inside and on faces and a lower bound near
    /// outer edges.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Obstacle::Cylinder {
                center,
                radius,
                base,
                height,
            } => {
                let dr = (p.x - center[0]).hypot(p.y - center[1]) - radius;
                let dz = (base - p.z).max(p.z - (base + height));
                if dr > 0.0 && dz > 0.0 {
                    dr.hypot(dz)
                } else {
                    dr.max(dz)
                }
            }
            Obstacle::Box {
                center,
                half_extents,
                yaw,
            } => {
                let (s, c) = yaw.sin_cos();
                let d = p - Vector3::new(center[0], center[1], center[2]);
                let local = Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
                let q = Vector3::new(
                    local.x.abs() - half_extents[0],
                    local.y.abs() - half_extents[1],
                    local.z.abs() - half_extents[2],
                );
                let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                outside + q.x.max(q.y).max(q.z).min(0.0)
            }
            Obstacle::Slope { .. } => self
                .planes()
                .iter()
                .map(|pl| pl.normal.dot(p) - pl.offset)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Nearest intersection with `t ∈ (0, t_max]` along a unit ray.
    pub(crate) fn intersect(
        &self,
        o: &Vector3<f64>,
        d: &Vector3<f64>,
        t_max: f64,
    ) -> Option<ShapeHit> {
        match self {
            Obstacle::Cylinder {
                center,
                radius,
                base,
                height,
            } => intersect_cylinder(o, d, *center, *radius, *base, base + height, t_max),
            _ => intersect_convex(&self.planes(), o, d, t_max),
        }
    }
}

fn intersect_cylinder(
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    c: [f64; 2],
    r: f64,
    z0: f64,
    z1: f64,
    t_max: f64,
) -> Option<ShapeHit> {
    let mut best: Option<ShapeHit> = None;
    let mut consider = |t: f64, normal: Vector3<f64>| {
        if t > 0.0 && t <= t_max && best.is_none_or(|b| t < b.t) {
            best = Some(ShapeHit { t, normal });
        }
    };
    let ox = o.x - c[0];
    let oy = o.y - c[1];
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-18 {
        let b = ox * d.x + oy * d.y;
        let cc = ox * ox + oy * oy - r * r;
        let disc = b * b - a * cc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / a, (-b + sq) / a] {
                let z = o.z + t * d.z;
                if z >= z0 && z <= z1 {
                    let n = Vector3::new(ox + t * d.x, oy + t * d.y, 0.0) / r;
                    if n.dot(d) < 0.0 {
                        consider(t, n);
                    }
                }
            }
        }
    }
    if d.z.abs() > 1e-18 {
        for (zc, n) in [(z1, Vector3::z()), (z0, -Vector3::z())] {
            let t = (zc - o.z) / d.z;
            let px = ox + t * d.x;
            let py = oy + t * d.y;
            if px * px + py * py <= r * r && n.dot(d) < 0.0 {
                consider(t, n);
            }
        }
    }
    best
}

/// Cyrus–Beck clipping against an intersection of half-spaces.
fn intersect_convex(
    planes: &[Plane],
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    t_max: f64,
) -> Option<ShapeHit> {
    let mut t_in = f64::NEG_INFINITY;
    let mut t_out = f64::INFINITY;
    let mut n_in = Vector3::zeros();
    for pl in planes {
        let denom = pl.normal.dot(d);
        let num = pl.offset - pl.normal.dot(o);
        if denom.abs() < 1e-15 {
            if num < 0.0 {
                return None;
            }
            continue;
        }
        let t = num / denom;
        if denom < 0.0 {
            if t > t_in {
                t_in = t;
                n_in = pl.normal;
            }
        } else if t < t_out {
            t_out = t;
        }
    }
    if t_in <= t_out && t_in > 0.0 && t_in <= t_max {
        Some(ShapeHit {
            t: t_in,
            normal: n_in,
        })
    } else {
        None
    }
}
