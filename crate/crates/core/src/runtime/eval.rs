use serde::{Deserialize, Serialize};

use super::episode::Script;
use super::{
    metrics, mix_seed, run_episode, DisturbanceEvent, EpisodeConfig, EpisodeSummary, LogRecord,
    MetricsReport, NavigationPolicy, RunMode, RuntimeError, TrajectoryLog, TrialOutcome, Trigger,
};
use crate::dynamics::{kinematic_step, ActionSequence};
use crate::features::{encode_goal, ExtractorKind};
use crate::geometry::Pose4;
use crate::imaging::WaterType;
use crate::policy::PolicyInput;
use crate::world::{
    generate_scenario, raycast_depth, CameraModel, Obstacle, Scenario, ScenarioKind,
    ScenarioParams, Terrain, SCENARIO_VERSION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavigationConfig {
    pub kind: ScenarioKind,
    pub scenario: ScenarioParams,
    pub trials: usize,
    pub base_seed: u64,
    pub episode: EpisodeConfig,
    pub mode: RunMode,
}

impl Default for NavigationConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Pillars,
            scenario: ScenarioParams::default(),
            trials: 20,
            base_seed: 1000,
            episode: EpisodeConfig::default(),
            mode: RunMode::Interleaved,
        }
    }
}

/// Seeded trials over one scenario family. Seeds whose scene cannot be
/// generated are skipped deterministically.
pub fn evaluate_navigation(
    policy: &dyn NavigationPolicy,
    cfg: &NavigationConfig,
    water: Option<WaterType>,
    extractor: ExtractorKind,
) -> Result<(MetricsReport, Vec<EpisodeSummary>), RuntimeError> {
    if cfg.trials == 0 {
        return Err(RuntimeError::Mismatch(
            "at least one trial is required".into(),
        ));
    }
    let mut outcomes = Vec::new();
    let mut summaries = Vec::new();
    let mut seed = cfg.base_seed;
    while summaries.len() < cfg.trials {
        let Ok(sc) = generate_scenario(cfg.kind, seed, &cfg.scenario) else {
            seed += 1;
            continue;
        };
        let log = run_episode(
            policy,
            &sc,
            water.clone(),
            extractor,
            &cfg.episode,
            mix_seed(cfg.base_seed, seed),
            &[],
            cfg.mode,
        )?;
        let s = log.summary;
        outcomes.push(TrialOutcome {
            reached: s.outcome == super::Outcome::Reached,
            collisions: s.collisions,
        });
        summaries.push(s);
        seed += 1;
    }
    Ok((metrics(&outcomes), summaries))
}

/// Flat open seabed for station keeping.
pub fn hover_scene(altitude: f64) -> Scenario {
    Scenario {
        version: SCENARIO_VERSION,
        kind: ScenarioKind::Hills,
        seed: 0,
        terrain: Terrain::flat([-6.0, -6.0], 0.5, 37, 25, 0.0),
        obstacles: vec![],
        start: Pose4::new(0.0, 0.0, altitude, 0.0),
        goal: [10.0, 0.0, altitude],
    }
}

/// Corridor with a single pillar on the centreline: passing left and passing
/// right are equally short.
pub fn two_path_scene() -> Scenario {
    let (length, half_w, wall, floor, top) = (3.0, 0.9, 0.1, -0.05, 1.2);
    let mut obstacles = vec![Obstacle::Cylinder {
        center: [1.5, 0.0],
        radius: 0.12,
        base: floor,
        height: top - floor,
    }];
    for side in [-1.0, 1.0] {
        obstacles.push(Obstacle::Box {
            center: [
                length / 2.0,
                side * (half_w + wall / 2.0),
                (floor + top) / 2.0,
            ],
            half_extents: [length / 2.0 + 2.0, wall / 2.0, (top - floor) / 2.0],
            yaw: 0.0,
        });
    }
    Scenario {
        version: SCENARIO_VERSION,
        kind: ScenarioKind::Pillars,
        seed: 0,
        terrain: Terrain::flat([-2.0, -2.9], 0.1, 71, 59, 0.0),
        obstacles,
        start: Pose4::new(0.3, 0.0, 0.4, 0.0),
        goal: [length - 0.3, 0.0, 0.4],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoverConfig {
    pub duration: f64,
    pub altitude: f64,
    pub disturbances: Vec<DisturbanceEvent>,
    pub band: f64,
    /// Seconds before the next disturbance over which the residual is averaged.
    pub residual_window: f64,
    pub episode: EpisodeConfig,
}

impl Default for HoverConfig {
    fn default() -> Self {
        Self {
            duration: 60.0,
            altitude: 0.5,
            disturbances: [5.0, 25.0, 45.0]
                .into_iter()
                .map(|t| DisturbanceEvent::heave(Trigger::Time(t), 350.0))
                .collect(),
            band: 0.1,
            residual_window: 2.0,
            episode: EpisodeConfig {
                stop_at_goal: false,
                stuck_window: 0.0,
                axis_mask: [false, false, true, false],
                script: Script::SurgeOscillation {
                    amplitude: 0.3,
                    period: 20.0,
                },
                ..EpisodeConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub t_disturbance: f64,
    pub peak_deviation: f64,
    /// Seconds from the disturbance until the altitude is back within the band.
    pub recovery_time: Option<f64>,
    /// Mean absolute deviation just before the next disturbance or the end.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoverSummary {
    pub reference_altitude: f64,
    pub max_deviation: f64,
    pub recoveries: Vec<RecoveryStats>,
}

/// Station keeping over a flat floor with only heave under policy control.
pub fn evaluate_hover(
    policy: &dyn NavigationPolicy,
    cfg: &HoverConfig,
    water: Option<WaterType>,
    extractor: ExtractorKind,
    seed: u64,
) -> Result<(TrajectoryLog, HoverSummary), RuntimeError> {
    let scene = hover_scene(cfg.altitude);
    let mut ep = cfg.episode.clone();
    ep.max_time = cfg.duration;
    let log = run_episode(
        policy,
        &scene,
        water,
        extractor,
        &ep,
        seed,
        &cfg.disturbances,
        RunMode::Interleaved,
    )?;
    let z_ref = cfg.altitude;
    let series: Vec<(f64, f64)> = log
        .states()
        .map(|(t, eta)| {
            (
                t,
                eta[2] - scene.terrain.height_clamped(eta[0], eta[1]) - z_ref,
            )
        })
        .collect();
    let marks: Vec<f64> = log
        .records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Disturbance { t, .. } => Some(*t),
            _ => None,
        })
        .collect();
    let mut recoveries = Vec::new();
    for (i, &td) in marks.iter().enumerate() {
        let end = marks.get(i + 1).copied().unwrap_or(f64::INFINITY);
        let window: Vec<(f64, f64)> = series
            .iter()
            .copied()
            .filter(|(t, _)| *t >= td && *t < end)
            .collect();
        let (t_peak, peak) = window.iter().fold((td, 0.0f64), |acc, (t, e)| {
            if e.abs() > acc.1 {
                (*t, e.abs())
            } else {
                acc
            }
        });
        let recovery_time = window
            .iter()
            .find(|(t, e)| *t >= t_peak && e.abs() <= cfg.band)
            .map(|(t, _)| t - td);
        let t_last = window.last().map_or(td, |w| w.0);
        let tail: Vec<f64> = window
            .iter()
            .filter(|(t, _)| *t > t_last - cfg.residual_window)
            .map(|(_, e)| e.abs())
            .collect();
        let residual = if tail.is_empty() {
            0.0
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        };
        recoveries.push(RecoveryStats {
            t_disturbance: td,
            peak_deviation: peak,
            recovery_time,
            residual,
        });
    }
    let max_deviation = series.iter().fold(0.0f64, |m, (_, e)| m.max(e.abs()));
    Ok((
        log,
        HoverSummary {
            reference_altitude: z_ref,
            max_deviation,
            recoveries,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTrajectory {
    pub d: f64,
    pub s: f64,
    pub seed: u64,
    pub commands: ActionSequence,
    /// Kinematic rollout of `commands` from the scene start.
    pub poses: Vec<Pose4>,
    /// Mean displacement along the start pose's left axis.
    pub mean_lateral: f64,
}

/// One sampled plan per `(d, s)` from the scene start with a shared noise seed.
pub fn goal_sweep(
    policy: &dyn NavigationPolicy,
    scene: &Scenario,
    d_values: &[f64],
    s_values: &[f64],
    noise_seed: u64,
    camera: &CameraModel,
    extractor: ExtractorKind,
    dt: f64,
) -> Result<Vec<SweepTrajectory>, RuntimeError> {
    let start = scene.start;
    let depth = raycast_depth(scene, &start.to_pose(), camera);
    let feat = extractor.build(None).extract(&depth, noise_seed);
    let p = policy.history();
    let mut out = Vec::new();
    for &d in d_values {
        for &s in s_values {
            let g = encode_goal(d, s).map_err(|e| RuntimeError::Mismatch(e.to_string()))?;
            let input = PolicyInput {
                frames: vec![feat.clone(); p + 1],
                goals: vec![g; p + 1],
            };
            let commands = policy.act(&input, noise_seed)?;
            let mut poses = vec![start];
            for c in &commands.actions {
                poses.push(kinematic_step(*poses.last().expect("non-empty"), *c, dt));
            }
            let (sy, cy) = start.yaw.sin_cos();
            let lateral: Vec<f64> = poses[1..]
                .iter()
                .map(|q| -sy * (q.x - start.x) + cy * (q.y - start.y))
                .collect();
            let mean_lateral = lateral.iter().sum::<f64>() / lateral.len().max(1) as f64;
            out.push(SweepTrajectory {
                d,
                s,
                seed: noise_seed,
                commands,
                poses,
                mean_lateral,
            });
        }
    }
    Ok(out)
}
