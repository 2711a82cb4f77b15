//! Run configuration, dataset generation and storage, training and report
//! assembly on top of the simulation and learning modules.

mod blob;
mod dataset;
mod report;

pub use dataset::{
    build_samples, fit_stats, gen_dataset, load_dataset, plan_terrain, save_dataset, Dataset,
    DatasetManifest, EpisodeRecord, Observation, ReferenceFrame, Split, TerrainPlan,
    DATASET_VERSION, EPISODE_VERSION,
};
pub use report::{hover_series, metrics_table, sweep_traces, ReportRow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ExtractorKind, FeatureError, NormStats};
use crate::imaging::WaterType;
use crate::planner::{AStarConfig, AltitudeRefineConfig, MpcConfig, PlannerError};
use crate::policy::{
    Policy, PolicyConfig, PolicyError, PolicyParams, TrainConfig, Trainer, TrainingSample,
};
use crate::runtime::{HoverConfig, NavigationConfig, RuntimeError};
use crate::world::{CameraModel, ScenarioParams, WorldError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("manifest mismatch: {0}")]
    Manifest(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub terrains: usize,
    /// Share of terrains that are pillar corridors; the rest are hills.
    pub pillars_fraction: f64,
    /// Share of terrains held out for validation.
    pub val_fraction: f64,
    /// Plan steps between consecutive observations.
    pub obs_stride: usize,
    /// Independent altitude draws per observation step.
    pub draws_per_step: usize,
    pub altitude_min: f64,
    pub altitude_max: f64,
    pub references_per_terrain: usize,
    /// Keep depth and clear images next to the features.
    pub store_frames: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            terrains: 12,
            pillars_fraction: 0.75,
            val_fraction: 1.0 / 6.0,
            obs_stride: 1,
            draws_per_step: 3,
            altitude_min: 0.3,
            altitude_max: 0.8,
            references_per_terrain: 8,
            store_frames: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Relative goal bearings in degrees.
    pub d_degrees: Vec<f64>,
    pub s_values: Vec<f64>,
    pub noise_seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            d_degrees: vec![-30.0, 0.0, 30.0],
            s_values: vec![0.7],
            noise_seeds: (0..5).collect(),
        }
    }
}

/// Every tunable of a run. Missing TOML keys fall back to the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// `none`, `IC`, `3C` or `7C`.
    pub water: String,
    pub extractor: ExtractorKind,
    /// Shared by data generation, evaluation and the sweep.
    pub camera: CameraModel,
    pub world: ScenarioParams,
    pub data: DataConfig,
    pub astar: AStarConfig,
    pub mpc1: MpcConfig,
    pub mpc2: AltitudeRefineConfig,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub navigation: NavigationConfig,
    pub hover: HoverConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Small model and dataset sized for a single CPU.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            water: "none".into(),
            extractor: ExtractorKind::Oracle,
            camera: CameraModel {
                width: 64,
                height: 64,
                ..CameraModel::default()
            },
            world: ScenarioParams::default(),
            data: DataConfig::default(),
            astar: AStarConfig {
                jitter: 0.5,
                ..AStarConfig::default()
            },
            mpc1: MpcConfig::default(),
            mpc2: AltitudeRefineConfig::default(),
            policy: PolicyConfig::desk(),
            train: TrainConfig {
                lr: 1e-3,
                epochs: 60,
                ..TrainConfig::default()
            },
            navigation: NavigationConfig::default(),
            hover: HoverConfig::default(),
            sweep: SweepConfig::default(),
        }
    }

    /// Full-size model and dataset.
    pub fn full() -> Self {
        Self {
            camera: CameraModel::default(),
            data: DataConfig {
                terrains: 120,
                ..DataConfig::default()
            },
            policy: PolicyConfig::default(),
            train: TrainConfig::default(),
            ..Self::desk()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn water_type(&self) -> Result<Option<WaterType>, HarnessError> {
        parse_water(&self.water)
    }

    /// Plan steps between history frames.
    pub fn frame_spacing(&self) -> usize {
        (self.navigation.episode.schedule.inference_period / self.mpc1.dt).round() as usize
    }

    /// Navigation settings with the shared camera.
    pub fn navigation_config(&self) -> NavigationConfig {
        let mut n = self.navigation.clone();
        n.scenario = self.world.clone();
        n.episode.camera = self.camera;
        n
    }

    pub fn hover_config(&self) -> HoverConfig {
        let mut h = self.hover.clone();
        h.episode.camera = self.camera;
        h
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.policy.validate()?;
        self.train.validate()?;
        self.mpc1.validate()?;
        self.camera.validate()?;
        self.water_type()?;
        self.navigation.episode.schedule.ticks()?;
        if self.mpc2.q != self.policy.q {
            return bad(format!(
                "mpc2.q {} differs from policy.q {}",
                self.mpc2.q, self.policy.q
            ));
        }
        if (self.mpc2.dt - self.mpc1.dt).abs() > 1e-12
            || (self.navigation.episode.schedule.control_period - self.mpc1.dt).abs() > 1e-9
        {
            return bad("mpc1.dt, mpc2.dt and the control period must agree".into());
        }
        let spacing = self.navigation.episode.schedule.inference_period / self.mpc1.dt;
        if (spacing - spacing.round()).abs() > 1e-9 || spacing < 1.0 {
            return bad("inference period must be a whole number of plan steps".into());
        }
        let d = &self.data;
        if d.terrains == 0
            || d.obs_stride == 0
            || d.draws_per_step == 0
            || d.references_per_terrain == 0
        {
            return bad(
                "terrains, obs_stride, draws_per_step and references_per_terrain must be positive"
                    .into(),
            );
        }
        if !(0.0..=1.0).contains(&d.pillars_fraction) || !(0.0..1.0).contains(&d.val_fraction) {
            return bad("pillars_fraction must lie in [0, 1] and val_fraction in [0, 1)".into());
        }
        if !(d.altitude_min > 0.0 && d.altitude_min <= d.altitude_max) {
            return bad(format!(
                "altitude range [{}, {}] is invalid",
                d.altitude_min, d.altitude_max
            ));
        }
        Ok(())
    }
}

/// `none` (case-insensitive) is clear water; otherwise a preset name.
pub fn parse_water(name: &str) -> Result<Option<WaterType>, HarnessError> {
    if name.eq_ignore_ascii_case("none") || name.eq_ignore_ascii_case("clear") {
        return Ok(None);
    }
    WaterType::preset(name).map(Some).ok_or_else(|| {
        HarnessError::Config(format!(
            "unknown water type '{name}' (expected none, IC, 3C or 7C)"
        ))
    })
}

/// Loss curve of a training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

/// Fits feature statistics on the training references and optimizes a fresh
/// network. `on_epoch(epoch, train_loss)` is called after every pass.
pub fn train_policy(
    dataset: &Dataset,
    policy_cfg: &PolicyConfig,
    train: &TrainConfig,
    refined: bool,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(Policy, TrainHistory), HarnessError> {
    let params = PolicyParams::init(policy_cfg.clone(), train.seed)?;
    let stats = fit_stats(dataset, &params)?;
    let data = build_samples(dataset, Split::Train, refined, policy_cfg.p)?;
    let val = build_samples(dataset, Split::Val, refined, policy_cfg.p)?;
    train_on_samples(params, stats, &data, &val, train, &mut on_epoch)
}

pub fn train_on_samples(
    params: PolicyParams,
    stats: NormStats,
    data: &[TrainingSample],
    val: &[TrainingSample],
    train: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<(Policy, TrainHistory), HarnessError> {
    if data.is_empty() {
        return Err(PolicyError::EmptyDataset.into());
    }
    let mut trainer = Trainer::new(params, stats, train.clone())?;
    let mut history = TrainHistory::default();
    for e in 0..train.epochs {
        let loss = trainer.epoch(data)?;
        history.epoch_loss.push(loss);
        on_epoch(e, loss);
    }
    if !val.is_empty() {
        history
            .val_loss
            .push(trainer.evaluate(val, train.seed ^ 0x5eed));
    }
    Ok((trainer.into_policy(), history))
}
