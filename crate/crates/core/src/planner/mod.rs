//! Expert supervision: waypoint search, receding-horizon velocity planning,
//! altitude refinement and the splice that produces training targets.

mod astar;
mod mpc1;
mod mpc2;

pub use astar::{plan_waypoints, segment_clearance, AStarConfig};
pub use mpc1::{generate_velocity_plan, horizon_cost, solve_horizon, HorizonSolution, MpcConfig};
pub use mpc2::{altitude_objective, refine_altitude, AltitudeRefineConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ActionSequence, VelocityCommand4};
use crate::geometry::Pose4;

/// Componentwise command limits `(v_x, v_y, v_z, v_psi)`.
pub const V_MAX: [f64; 4] = [0.6, 0.4, 0.2, 0.15];

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("no collision-free path: {0}")]
    NoPath(String),
    #[error("velocity planning stopped after {steps} steps at waypoint {waypoint} of {total}")]
    NonConvergence {
        steps: usize,
        waypoint: usize,
        total: usize,
        partial: Box<VelocityPlan>,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("supervision window {tau}..{tau}+{q} exceeds plan length {len}")]
    Index { tau: usize, q: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPath {
    pub waypoints: Vec<Pose4>,
}

impl WaypointPath {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn length_xy(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }
}

/// Commands at a fixed period together with the kinematic rollout they produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityPlan {
    pub dt: f64,
    pub commands: Vec<VelocityCommand4>,
    /// `poses[k]` is the pose before `commands[k]`; one longer than `commands`.
    pub poses: Vec<Pose4>,
    /// Waypoint being tracked when `commands[k]` was chosen.
    pub waypoint_index: Vec<usize>,
}

impl VelocityPlan {
    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    /// Appends `n` zero commands, holding the final pose.
    pub fn pad_with_stop(&mut self, n: usize) {
        let last = *self.poses.last().expect("plan has a start pose");
        let w = self.waypoint_index.last().copied().unwrap_or(0);
        for _ in 0..n {
            self.commands.push(VelocityCommand4::default());
            self.poses.push(last);
            self.waypoint_index.push(w);
        }
    }
}

/// Copies `plan[tau..tau+q]` and replaces the heave component by `refined_z`.
pub fn assemble_supervision(
    plan: &VelocityPlan,
    refined_z: &[f64],
    tau: usize,
    q: usize,
) -> Result<ActionSequence, PlannerError> {
    if tau + q > plan.len() {
        return Err(PlannerError::Index {
            tau,
            q,
            len: plan.len(),
        });
    }
    if refined_z.len() != q {
        return Err(PlannerError::InvalidInput(format!(
            "refined heave has {} entries, expected {q}",
            refined_z.len()
        )));
    }
    let actions = plan.commands[tau..tau + q]
        .iter()
        .zip(refined_z)
        .map(|(c, z)| VelocityCommand4 { vz: *z, ..*c })
        .collect();
    Ok(ActionSequence::new(actions))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(n: usize) -> VelocityPlan {
        let commands: Vec<_> = (0..n)
            .map(|k| VelocityCommand4::new(0.01 * k as f64, -0.02, 0.05, 0.001 * k as f64))
            .collect();
        VelocityPlan {
            dt: 0.1,
            poses: vec![Pose4::default(); n + 1],
            waypoint_index: vec![0; n],
            commands,
        }
    }

    #[test]
    fn unchanged_heave_returns_slice() {
        let p = plan(40);
        let z: Vec<f64> = p.commands[3..35].iter().map(|c| c.vz).collect();
        let s = assemble_supervision(&p, &z, 3, 32).unwrap();
        assert_eq!(s.actions, p.commands[3..35].to_vec());
        assert_eq!(s.len(), 32);
    }

    #[test]
    fn splice_keeps_other_axes_bitwise() {
        let p = plan(32);
        let z: Vec<f64> = (0..32).map(|k| -0.1 + 0.003 * k as f64).collect();
        let s = assemble_supervision(&p, &z, 0, 32).unwrap();
        for (m, a) in s.actions.iter().enumerate() {
            let c = p.commands[m];
            assert_eq!(a.vx.to_bits(), c.vx.to_bits());
            assert_eq!(a.vy.to_bits(), c.vy.to_bits());
            assert_eq!(a.vpsi.to_bits(), c.vpsi.to_bits());
            assert_eq!(a.vz, z[m]);
        }
    }

    #[test]
    fn window_past_end_is_rejected() {
        let p = plan(40);
        assert!(matches!(
            assemble_supervision(&p, &[0.0; 32], 9, 32),
            Err(PlannerError::Index { .. })
        ));
    }
}
