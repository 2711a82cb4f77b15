//! Procedural seabed scenes, geometric queries and the depth camera.

mod camera;
mod collision;
mod generate;
mod shapes;
mod terrain;

pub use camera::{
    cast_ray, raycast_depth, render, render_clear, CameraModel, ClearImage, DepthImage, Material,
    RayHit, BACKGROUND,
};
pub use collision::{
    check_collision, CollisionEvent, CollisionKind, CollisionMonitor, CollisionReport,
    VEHICLE_RADIUS,
};
pub use generate::{generate_scenario, HillsParams, PillarsParams, ScenarioParams};
pub use shapes::Obstacle;
pub use terrain::Terrain;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose4;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("query ({x:.3}, {y:.3}) lies outside the terrain footprint")]
    OutOfFootprint { x: f64, y: f64 },
    #[error("invalid terrain: {0}")]
    InvalidTerrain(String),
    #[error("invalid obstacle: {0}")]
    InvalidObstacle(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("could not place {what} after {attempts} attempts")]
    PlacementFailure { what: String, attempts: usize },
    #[error("scenario file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    Hills,
    Pillars,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub terrain: Terrain,
    pub obstacles: Vec<Obstacle>,
    pub start: Pose4,
    pub goal: [f64; 3],
}

impl Scenario {
    /// Smallest signed distance from `p` to any obstacle surface.
    pub fn obstacle_distance(&self, p: &Vector3<f64>) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Height of `p` above the seabed directly below it.
    pub fn altitude(&self, p: &Vector3<f64>) -> f64 {
        p.z - self.terrain.height_clamped(p.x, p.y)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.version != SCENARIO_VERSION {
            return Err(WorldError::Version {
                found: self.version,
                expected: SCENARIO_VERSION,
            });
        }
        for o in &self.obstacles {
            o.validate()?;
        }
        if !self.terrain.contains(self.goal[0], self.goal[1]) {
            return Err(WorldError::OutOfFootprint {
                x: self.goal[0],
                y: self.goal[1],
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, WorldError> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), WorldError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, WorldError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
