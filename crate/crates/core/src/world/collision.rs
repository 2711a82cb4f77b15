use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::Scenario;

/// Radius of the vehicle's bounding sphere.
pub const VEHICLE_RADIUS: f64 = 0.25;
/// Minimum allowed seabed clearance of the vehicle reference point.
pub const MIN_CLEARANCE: f64 = 0.1;
/// Allowed altitude deviation around the reference altitude.
pub const ALTITUDE_BAND: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionKind {
    ObstacleContact,
    TerrainClearance,
    AltitudeBand,
}

impl CollisionKind {
    const ALL: [CollisionKind; 3] = [
        CollisionKind::ObstacleContact,
        CollisionKind::TerrainClearance,
        CollisionKind::AltitudeBand,
    ];

    fn index(self) -> usize {
        self as usize
    }

    /// Whether the event counts as a collision in navigation metrics.
    pub fn is_collision(self) -> bool {
        !matches!(self, CollisionKind::AltitudeBand)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub kind: CollisionKind,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub events: Vec<CollisionEvent>,
}

impl CollisionReport {
    pub fn count(&self, kind: CollisionKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn collisions(&self) -> usize {
        self.events.iter().filter(|e| e.kind.is_collision()).count()
    }
}

/// Streaming violation detector.
///
/// An event fires when a violation starts, unless an event of the same kind
/// fired less than `window` seconds earlier. A violation that persists
/// therefore yields exactly one event.
#[derive(Debug, Clone)]
pub struct CollisionMonitor {
    window: f64,
    active: [bool; 3],
    last_event: [Option<f64>; 3],
    report: CollisionReport,
}

impl CollisionMonitor {
    pub fn new(window: f64) -> Self {
        Self {
            window,
            active: [false; 3],
            last_event: [None; 3],
            report: CollisionReport::default(),
        }
    }

    pub fn violations(
        scenario: &Scenario,
        p: &Vector3<f64>,
        reference_altitude: Option<f64>,
    ) -> [bool; 3] {
        let altitude = scenario.altitude(p);
        [
            scenario.obstacle_distance(p) < VEHICLE_RADIUS,
            altitude < MIN_CLEARANCE,
            reference_altitude.is_some_and(|r| (altitude - r).abs() > ALTITUDE_BAND),
        ]
    }

    /// Feeds one sample; returns the events it produced.
    pub fn observe(
        &mut self,
        scenario: &Scenario,
        time: f64,
        p: &Vector3<f64>,
        reference_altitude: Option<f64>,
    ) -> Vec<CollisionEvent> {
        let v = Self::violations(scenario, p, reference_altitude);
        let mut out = Vec::new();
        for kind in CollisionKind::ALL {
            let k = kind.index();
            if v[k] && !self.active[k] {
                let recent = self.last_event[k].is_some_and(|t| time - t < self.window);
                if !recent {
                    let ev = CollisionEvent {
                        time,
                        kind,
                        position: [p.x, p.y, p.z],
                    };
                    self.last_event[k] = Some(time);
                    self.report.events.push(ev);
                    out.push(ev);
                }
            }
            self.active[k] = v[k];
        }
        out
    }

    pub fn report(&self) -> &CollisionReport {
        &self.report
    }

    pub fn into_report(self) -> CollisionReport {
        self.report
    }
}

/// Runs a [`CollisionMonitor`] over a timed sequence of positions.
pub fn check_collision(
    scenario: &Scenario,
    samples: &[(f64, Vector3<f64>)],
    reference_altitude: Option<f64>,
    window: f64,
) -> CollisionReport {
    let mut m = CollisionMonitor::new(window);
    for (t, p) in samples {
        m.observe(scenario, *t, p, reference_altitude);
    }
    m.into_report()
}
