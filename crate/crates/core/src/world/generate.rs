use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::collision::{MIN_CLEARANCE, VEHICLE_RADIUS};
use super::{Obstacle, Scenario, ScenarioKind, Terrain, WorldError, SCENARIO_VERSION};
use crate::geometry::{wrap_angle, Pose4};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HillsParams {
    pub length: f64,
    pub width: f64,
    pub cell_size: f64,
    pub amplitude: f64,
    pub bumps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for HillsParams {
    fn default() -> Self {
        Self {
            length: 10.0,
            width: 6.0,
            cell_size: 0.25,
            amplitude: 0.5,
            bumps: 10,
            sigma_min: 0.8,
            sigma_max: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PillarsParams {
    pub length: f64,
    pub width: f64,
    pub depth: f64,
    pub count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub cell_size: f64,
    pub wall_thickness: f64,
    /// Peak seabed relief; zero gives a flat floor.
    pub terrain_amplitude: f64,
    /// Minimum surface-to-surface gap between pillars.
    pub min_gap: f64,
}

impl Default for PillarsParams {
    fn default() -> Self {
        Self {
            length: 3.0,
            width: 1.8,
            depth: 1.0,
            count: 3,
            radius_min: 0.06,
            radius_max: 0.12,
            cell_size: 0.1,
            wall_thickness: 0.1,
            terrain_amplitude: 0.0,
            min_gap: 2.0 * VEHICLE_RADIUS + 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub hills: HillsParams,
    pub pillars: PillarsParams,
    /// Start and goal altitude above the seabed.
    pub altitude: f64,
    /// Required free distance from start and goal to every obstacle surface.
    pub margin: f64,
    /// Start/goal lateral offsets are drawn from `±lateral_spread · usable half-width`.
    pub lateral_spread: f64,
    /// Start heading is the start→goal bearing plus a uniform draw in `±yaw_jitter`.
    pub yaw_jitter: f64,
    /// Distance of start and goal from the ends of the scene.
    pub end_offset: f64,
    pub max_attempts: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            hills: HillsParams::default(),
            pillars: PillarsParams::default(),
            altitude: 0.4,
            margin: 0.5,
            lateral_spread: 0.0,
            yaw_jitter: 0.0,
            end_offset: 0.3,
            max_attempts: 500,
        }
    }
}

fn bump_field(
    rng: &mut ChaCha8Rng,
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    bumps: usize,
    sigma: (f64, f64),
    amplitude: f64,
) -> Vec<f64> {
    let w = (nx - 1) as f64 * cell;
    let h = (ny - 1) as f64 * cell;
    let spec: Vec<(f64, f64, f64, f64)> = (0..bumps)
        .map(|_| {
            (
                origin[0] + rng.gen::<f64>() * w,
                origin[1] + rng.gen::<f64>() * h,
                rng.gen_range(sigma.0..=sigma.1),
                rng.gen_range(-1.0..=1.0),
            )
        })
        .collect();
    let mut hs: Vec<f64> = (0..nx * ny)
        .map(|k| {
            let x = origin[0] + (k % nx) as f64 * cell;
            let y = origin[1] + (k / nx) as f64 * cell;
            spec.iter()
                .map(|(cx, cy, s, a)| {
                    a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp()
                })
                .sum()
        })
        .collect();
    let peak = hs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 && amplitude > 0.0 {
        hs.iter_mut().for_each(|v| *v *= amplitude / peak);
    } else {
        hs.iter_mut().for_each(|v| *v = 0.0);
    }
    hs
}

fn grid_for(x0: f64, x1: f64, y0: f64, y1: f64, cell: f64) -> ([f64; 2], usize, usize) {
    let nx = ((x1 - x0) / cell).ceil() as usize + 1;
    let ny = ((y1 - y0) / cell).ceil() as usize + 1;
    ([x0, y0], nx.max(2), ny.max(2))
}

fn endpoint_ok(
    sc_terrain: &Terrain,
    obstacles: &[Obstacle],
    p: &Vector3<f64>,
    margin: f64,
) -> bool {
    let clear = obstacles.iter().all(|o| o.signed_distance(p) >= margin);
    clear && p.z - sc_terrain.height_clamped(p.x, p.y) >= MIN_CLEARANCE
}

/// Builds a scenario deterministically from `(kind, seed, params)`.
pub fn generate_scenario(
    kind: ScenarioKind,
    seed: u64,
    params: &ScenarioParams,
) -> Result<Scenario, WorldError> {
    let tag = match kind {
        ScenarioKind::Hills => 0x4869_6c6c,
        ScenarioKind::Pillars => 0x5069_6c6c,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag);
    match kind {
        ScenarioKind::Hills => hills(&mut rng, seed, params),
        ScenarioKind::Pillars => pillars(&mut rng, seed, params),
    }
}

fn endpoints(
    rng: &mut ChaCha8Rng,
    terrain: &Terrain,
    x_start: f64,
    x_goal: f64,
    half_width: f64,
    params: &ScenarioParams,
) -> (Pose4, [f64; 3]) {
    let ys = rng.gen_range(-1.0..=1.0) * params.lateral_spread * half_width;
    let yg = rng.gen_range(-1.0..=1.0) * params.lateral_spread * half_width;
    let jitter = rng.gen_range(-1.0..=1.0) * params.yaw_jitter;
    let zs = terrain.height_clamped(x_start, ys) + params.altitude;
    let zg = terrain.height_clamped(x_goal, yg) + params.altitude;
    let yaw = wrap_angle((yg - ys).atan2(x_goal - x_start) + jitter);
    (Pose4::new(x_start, ys, zs, yaw), [x_goal, yg, zg])
}

fn hills(rng: &mut ChaCha8Rng, seed: u64, params: &ScenarioParams) -> Result<Scenario, WorldError> {
    let hp = &params.hills;
    let pad = 3.0;
    let (origin, nx, ny) = grid_for(
        -pad,
        hp.length + pad,
        -hp.width / 2.0 - pad,
        hp.width / 2.0 + pad,
        hp.cell_size,
    );
    let heights = bump_field(
        rng,
        origin,
        hp.cell_size,
        nx,
        ny,
        hp.bumps,
        (hp.sigma_min, hp.sigma_max),
        hp.amplitude,
    );
    let terrain = Terrain::new(origin, hp.cell_size, nx, ny, heights)?;
    let half = hp.width / 2.0 - 0.5;
    let (start, goal) = endpoints(
        rng,
        &terrain,
        params.end_offset,
        hp.length - params.end_offset,
        half,
        params,
    );
    Ok(Scenario {
        version: SCENARIO_VERSION,
        kind: ScenarioKind::Hills,
        seed,
        terrain,
        obstacles: Vec::new(),
        start,
        goal,
    })
}

fn pillars(
    rng: &mut ChaCha8Rng,
    seed: u64,
    params: &ScenarioParams,
) -> Result<Scenario, WorldError> {
    let pp = &params.pillars;
    let pad = 2.0;
    let (origin, nx, ny) = grid_for(
        -pad,
        pp.length + pad,
        -pp.width / 2.0 - pad,
        pp.width / 2.0 + pad,
        pp.cell_size,
    );
    let heights = if pp.terrain_amplitude > 0.0 {
        bump_field(
            rng,
            origin,
            pp.cell_size,
            nx,
            ny,
            6,
            (0.4, 1.0),
            pp.terrain_amplitude,
        )
    } else {
        vec![0.0; nx * ny]
    };
    let terrain = Terrain::new(origin, pp.cell_size, nx, ny, heights)?;
    let floor = terrain.bounds.0 - 0.05;
    let top = terrain.bounds.1.max(0.0) + pp.depth + 0.2;
    let half_w = pp.width / 2.0;
    let mut walls = Vec::new();
    for side in [-1.0, 1.0] {
        walls.push(Obstacle::Box {
            center: [
                pp.length / 2.0,
                side * (half_w + pp.wall_thickness / 2.0),
                (floor + top) / 2.0,
            ],
            half_extents: [
                pp.length / 2.0 + pad,
                pp.wall_thickness / 2.0,
                (top - floor) / 2.0,
            ],
            yaw: 0.0,
        });
    }
    let (start, goal) = endpoints(
        rng,
        &terrain,
        params.end_offset,
        pp.length - params.end_offset,
        half_w - params.margin,
        params,
    );
    let sp = start.position();
    let gp = Vector3::new(goal[0], goal[1], goal[2]);
    if !endpoint_ok(&terrain, &walls, &sp, params.margin)
        || !endpoint_ok(&terrain, &walls, &gp, params.margin)
    {
        return Err(WorldError::PlacementFailure {
            what: "start/goal inside the corridor".into(),
            attempts: 1,
        });
    }
    let mut pillars: Vec<Obstacle> = Vec::new();
    let mut attempts = 0;
    while pillars.len() < pp.count {
        attempts += 1;
        if attempts > params.max_attempts {
            return Err(WorldError::PlacementFailure {
                what: format!("pillar {} of {}", pillars.len() + 1, pp.count),
                attempts: params.max_attempts,
            });
        }
        let r = rng.gen_range(pp.radius_min..=pp.radius_max);
        let cx = rng.gen_range(0.0..=pp.length);
        let cy = rng.gen_range(-half_w + r..=half_w - r);
        let base = terrain.min_height_near(cx, cy, r) - 0.05;
        let cand = Obstacle::Cylinder {
            center: [cx, cy],
            radius: r,
            base,
            height: top - base,
        };
        let far_from_ends = [sp, gp].iter().all(|p| {
            // measured at the endpoint height so tall pillars count fully
            cand.signed_distance(p) >= params.margin
        });
        let spaced = pillars.iter().all(|o| {
            let c = o.center_xy();
            let ro = match o {
                Obstacle::Cylinder { radius, .. } => *radius,
                _ => 0.0,
            };
            (c[0] - cx).hypot(c[1] - cy) - ro - r >= pp.min_gap
        });
        if far_from_ends && spaced {
            pillars.push(cand);
        }
    }
    let mut obstacles = walls;
    obstacles.extend(pillars);
    Ok(Scenario {
        version: SCENARIO_VERSION,
        kind: ScenarioKind::Pillars,
        seed,
        terrain,
        obstacles,
        start,
        goal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pillars_are_deterministic() {
        let p = ScenarioParams::default();
        let a = generate_scenario(ScenarioKind::Pillars, 7, &p).unwrap();
        let b = generate_scenario(ScenarioKind::Pillars, 7, &p).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn hills_respect_amplitude() {
        let mut p = ScenarioParams::default();
        p.hills.amplitude = 0.5;
        let s = generate_scenario(ScenarioKind::Hills, 1, &p).unwrap();
        assert!(s.terrain.heights.iter().all(|h| h.abs() <= 0.5 + 1e-12));
        assert!(s.terrain.heights.iter().any(|h| h.abs() > 0.49));
    }

    #[test]
    fn pillars_keep_margin_from_endpoints() {
        let p = ScenarioParams::default();
        let s = generate_scenario(ScenarioKind::Pillars, 3, &p).unwrap();
        let cyl: Vec<_> = s
            .obstacles
            .iter()
            .filter(|o| matches!(o, Obstacle::Cylinder { .. }))
            .collect();
        assert_eq!(cyl.len(), 3);
        let g = Vector3::new(s.goal[0], s.goal[1], s.goal[2]);
        for o in cyl {
            assert!(o.signed_distance(&s.start.position()) >= p.margin);
            assert!(o.signed_distance(&g) >= p.margin);
        }
    }

    #[test]
    fn corridor_matches_configured_dimensions() {
        let p = ScenarioParams::default();
        let s = generate_scenario(ScenarioKind::Pillars, 11, &p).unwrap();
        let walls: Vec<_> = s
            .obstacles
            .iter()
            .filter_map(|o| match o {
                Obstacle::Box {
                    center,
                    half_extents,
                    ..
                } => Some((center[1], half_extents[1])),
                _ => None,
            })
            .collect();
        assert_eq!(walls.len(), 2);
        let inner: Vec<f64> = walls.iter().map(|(c, h)| c.abs() - h).collect();
        assert!(inner.iter().all(|w| (w - 0.9).abs() < 1e-12));
        assert!((s.goal[0] - s.start.x - (3.0 - 2.0 * p.end_offset)).abs() < 1e-12);
    }

    #[test]
    fn impossible_packing_fails_cleanly() {
        let mut p = ScenarioParams::default();
        p.pillars.count = 40;
        p.max_attempts = 200;
        assert!(matches!(
            generate_scenario(ScenarioKind::Pillars, 1, &p),
            Err(WorldError::PlacementFailure { .. })
        ));
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = generate_scenario(ScenarioKind::Hills, 4, &ScenarioParams::default()).unwrap();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn wrong_version_rejected() {
        let mut s =
            generate_scenario(ScenarioKind::Pillars, 2, &ScenarioParams::default()).unwrap();
        s.version = 99;
        assert!(matches!(
            Scenario::from_json(&s.to_json()),
            Err(WorldError::Version { .. })
        ));
    }
}
