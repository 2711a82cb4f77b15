use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PlannerError, WaypointPath};
use crate::geometry::Pose4;
use crate::world::{Scenario, VEHICLE_RADIUS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AStarConfig {
    /// Grid spacing in meters.
    pub resolution: f64,
    /// Cells closer than this to an obstacle are blocked.
    pub margin: f64,
    pub clearance_weight: f64,
    /// Decay length of the clearance penalty.
    pub clearance_scale: f64,
    /// Clearance a shortcut tries to keep once it is clear of the margin.
    pub preferred_clearance: f64,
    /// Altitude above the seabed; `None` uses the start altitude.
    pub altitude: Option<f64>,
    /// Relative amplitude of a seeded cost perturbation on a coarse grid.
    pub jitter: f64,
    pub jitter_cell: f64,
    pub seed: u64,
    /// Longest allowed spacing between consecutive waypoints.
    pub max_spacing: f64,
}

impl Default for AStarConfig {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            margin: VEHICLE_RADIUS + 0.03,
            clearance_weight: 2.0,
            clearance_scale: 0.15,
            preferred_clearance: VEHICLE_RADIUS + 0.2,
            altitude: None,
            jitter: 0.0,
            jitter_cell: 0.5,
            seed: 0,
            max_spacing: 2.0,
        }
    }
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn clearance_at(scenario: &Scenario, x: f64, y: f64, altitude: f64) -> f64 {
    let z = scenario.terrain.height_clamped(x, y) + altitude;
    scenario.obstacle_distance(&Vector3::new(x, y, z))
}

/// Smallest obstacle distance along `a → b`, sampled every `step` meters at the given altitude.
pub fn segment_clearance(
    scenario: &Scenario,
    a: [f64; 2],
    b: [f64; 2],
    altitude: f64,
    step: f64,
) -> f64 {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    let n = (len / step).ceil().max(1.0) as usize;
    (0..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            let x = a[0] + t * (b[0] - a[0]);
            let y = a[1] + t * (b[1] - a[1]);
            if scenario.terrain.contains(x, y) {
                clearance_at(scenario, x, y, altitude)
            } else {
                f64::NEG_INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min)
}

struct Grid {
    x0: f64,
    y0: f64,
    res: f64,
    nx: usize,
    ny: usize,
}

impl Grid {
    fn point(&self, idx: usize) -> [f64; 2] {
        [
            self.x0 + (idx % self.nx) as f64 * self.res,
            self.y0 + (idx / self.nx) as f64 * self.res,
        ]
    }

    fn nearest(&self, x: f64, y: f64) -> usize {
        let i = (((x - self.x0) / self.res).round().max(0.0) as usize).min(self.nx - 1);
        let j = (((y - self.y0) / self.res).round().max(0.0) as usize).min(self.ny - 1);
        j * self.nx + i
    }
}

/// Grid A* over the seabed footprint with clearance-penalized costs,
/// followed by line-of-sight pruning and densification.
pub fn plan_waypoints(
    scenario: &Scenario,
    cfg: &AStarConfig,
) -> Result<WaypointPath, PlannerError> {
    if cfg.resolution <= 0.0 || cfg.margin < 0.0 || cfg.max_spacing <= 0.0 {
        return Err(PlannerError::InvalidInput(
            "planner resolution, margin and spacing must be positive".into(),
        ));
    }
    let start = scenario.start;
    let goal = scenario.goal;
    let altitude = cfg
        .altitude
        .unwrap_or_else(|| scenario.altitude(&start.position()));
    let mk = |x: f64, y: f64, yaw: f64| {
        Pose4::new(x, y, scenario.terrain.height_clamped(x, y) + altitude, yaw)
    };

    if (goal[0] - start.x).hypot(goal[1] - start.y) < 1e-9 {
        return Ok(WaypointPath {
            waypoints: vec![mk(start.x, start.y, start.yaw)],
        });
    }

    let (ex0, ex1, ey0, ey1) = scenario.terrain.extent();
    let grid = Grid {
        x0: ex0,
        y0: ey0,
        res: cfg.resolution,
        nx: ((ex1 - ex0) / cfg.resolution).floor() as usize + 1,
        ny: ((ey1 - ey0) / cfg.resolution).floor() as usize + 1,
    };
    let n = grid.nx * grid.ny;
    let clear: Vec<f64> = (0..n)
        .map(|k| {
            let [x, y] = grid.point(k);
            clearance_at(scenario, x, y, altitude)
        })
        .collect();

    let jitter_field = (cfg.jitter > 0.0).then(|| {
        let cx = ((ex1 - ex0) / cfg.jitter_cell).ceil() as usize + 1;
        let cy = ((ey1 - ey0) / cfg.jitter_cell).ceil() as usize + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let vals: Vec<f64> = (0..cx * cy).map(|_| rng.gen::<f64>()).collect();
        (cx, vals)
    });
    let multiplier = |k: usize| -> f64 {
        let pen = cfg.clearance_weight * (-(clear[k] - cfg.margin) / cfg.clearance_scale).exp();
        let jit = jitter_field.as_ref().map_or(0.0, |(cx, vals)| {
            let [x, y] = grid.point(k);
            let i = ((x - ex0) / cfg.jitter_cell) as usize;
            let j = ((y - ey0) / cfg.jitter_cell) as usize;
            cfg.jitter * vals[j * cx + i]
        });
        (1.0 + pen) * (1.0 + jit)
    };

    let s = grid.nearest(start.x, start.y);
    let g = grid.nearest(goal[0], goal[1]);
    if clear[s] < cfg.margin || clear[g] < cfg.margin {
        return Err(PlannerError::NoPath(
            "start or goal lies inside the inflated obstacle region".into(),
        ));
    }
    let gp = grid.point(g);
    let heuristic = |k: usize| {
        let p = grid.point(k);
        let dx = (p[0] - gp[0]).abs();
        let dy = (p[1] - gp[1]).abs();
        dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
    };

    let mut cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    cost[s] = 0.0;
    open.push(Open {
        f: heuristic(s),
        idx: s,
    });
    let free = |k: usize| clear[k] >= cfg.margin;
    while let Some(Open { idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == g {
            break;
        }
        let (i, j) = ((idx % grid.nx) as i64, (idx / grid.nx) as i64);
        for (di, dj) in [
            (-1, 0),
            (1, 0),
            (0, -1),
            (0, 1),
            (-1, -1),
            (-1, 1),
            (1, -1),
            (1, 1),
        ] {
            let (ni, nj) = (i + di, j + dj);
            if ni < 0 || nj < 0 || ni >= grid.nx as i64 || nj >= grid.ny as i64 {
                continue;
            }
            let nb = nj as usize * grid.nx + ni as usize;
            if closed[nb] || !free(nb) {
                continue;
            }
            if di != 0 && dj != 0 {
                let a = j as usize * grid.nx + ni as usize;
                let b = nj as usize * grid.nx + i as usize;
                if !free(a) || !free(b) {
                    continue;
                }
            }
            let step = if di != 0 && dj != 0 {
                std::f64::consts::SQRT_2
            } else {
                1.0
            } * grid.res;
            let c = cost[idx] + step * multiplier(nb);
            if c < cost[nb] {
                cost[nb] = c;
                parent[nb] = idx;
                open.push(Open {
                    f: c + heuristic(nb),
                    idx: nb,
                });
            }
        }
    }
    if !closed[g] {
        return Err(PlannerError::NoPath(
            "goal unreachable on the planning grid".into(),
        ));
    }

    let mut cells = vec![g];
    while *cells.last().unwrap() != s {
        cells.push(parent[*cells.last().unwrap()]);
    }
    cells.reverse();
    let mut pts: Vec<[f64; 2]> = cells.iter().map(|k| grid.point(*k)).collect();
    let node_clear: Vec<f64> = cells.iter().map(|k| clear[*k]).collect();
    pts[0] = [start.x, start.y];
    *pts.last_mut().unwrap() = [goal[0], goal[1]];

    // line-of-sight pruning
    let check_step = cfg.resolution / 2.0;
    let mut corners = vec![0usize];
    let mut i = 0;
    while i + 1 < pts.len() {
        let mut best = i + 1;
        let mut span_min = node_clear[i].min(node_clear[i + 1]);
        for k in i + 2..pts.len() {
            span_min = span_min.min(node_clear[k]);
            let need = span_min.min(cfg.preferred_clearance).max(cfg.margin);
            if segment_clearance(scenario, pts[i], pts[k], altitude, check_step) >= need {
                best = k;
            } else {
                break;
            }
        }
        corners.push(best);
        i = best;
    }

    let mut xy: Vec<[f64; 2]> = vec![pts[0]];
    for w in corners.windows(2) {
        let (a, b) = (pts[w[0]], pts[w[1]]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let parts = (len / cfg.max_spacing).ceil().max(1.0) as usize;
        for p in 1..=parts {
            let t = p as f64 / parts as f64;
            xy.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    let waypoints = xy
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let (a, b) = if k == 0 {
                (xy[0], xy[1])
            } else {
                (xy[k - 1], xy[k])
            };
            mk(p[0], p[1], (b[1] - a[1]).atan2(b[0] - a[0]))
        })
        .collect();
    Ok(WaypointPath { waypoints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Obstacle, ScenarioKind, Terrain, SCENARIO_VERSION};

    fn open_scene(goal: [f64; 3]) -> Scenario {
        Scenario {
            version: SCENARIO_VERSION,
            kind: ScenarioKind::Hills,
            seed: 0,
            terrain: Terrain::flat([-2.0, -2.0], 0.5, 17, 13, 0.0),
            obstacles: vec![],
            start: Pose4::new(0.0, 0.0, 0.4, 0.0),
            goal,
        }
    }

    #[test]
    fn open_map_is_straight() {
        let sc = open_scene([4.0, 1.5, 0.4]);
        let path = plan_waypoints(&sc, &AStarConfig::default()).unwrap();
        let bearing = 1.5f64.atan2(4.0);
        for w in &path.waypoints {
            assert!((w.yaw - bearing).abs() < 1e-9);
            // collinear with start → goal
            assert!((w.y * 4.0 - w.x * 1.5).abs() < 1e-9);
            assert!((w.z - 0.4).abs() < 1e-12);
        }
        let last = path.waypoints.last().unwrap();
        assert_eq!((last.x, last.y), (4.0, 1.5));
    }

    #[test]
    fn start_equal_goal_is_single_waypoint() {
        let sc = open_scene([0.0, 0.0, 0.4]);
        let path = plan_waypoints(&sc, &AStarConfig::default()).unwrap();
        assert_eq!(path.len(), 1);
    }

    #[test]
    fn walled_off_goal_has_no_path() {
        let mut sc = open_scene([4.0, 0.0, 0.4]);
        sc.obstacles.push(Obstacle::Box {
            center: [2.0, 0.0, 0.0],
            half_extents: [0.1, 20.0, 5.0],
            yaw: 0.0,
        });
        assert!(matches!(
            plan_waypoints(&sc, &AStarConfig::default()),
            Err(PlannerError::NoPath(_))
        ));
    }

    #[test]
    fn spacing_is_bounded() {
        let sc = open_scene([5.5, 0.0, 0.4]);
        let cfg = AStarConfig {
            max_spacing: 1.0,
            ..AStarConfig::default()
        };
        let path = plan_waypoints(&sc, &cfg).unwrap();
        for w in path.waypoints.windows(2) {
            assert!((w[1].x - w[0].x).hypot(w[1].y - w[0].y) <= 1.0 + 1e-12);
        }
    }
}
