//! Closed-loop execution: asynchronous perception and control on a virtual
//! clock, disturbance injection, metrics and the evaluation protocols.

mod episode;
mod eval;

pub use episode::{action_index, run_episode, EpisodeConfig, RunMode};
pub use eval::{
    evaluate_hover, evaluate_navigation, goal_sweep, hover_scene, two_path_scene, HoverConfig,
    HoverSummary, NavigationConfig, RecoveryStats, SweepTrajectory,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ActionSequence, DynamicsError, VelocityCommand4};
use crate::features::{encode_goal, progress, GoalEncoding};
use crate::geometry::{wrap_angle, Pose4};
use crate::policy::{Policy, PolicyError, PolicyInput};
use crate::world::{CollisionKind, WorldError};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("policy/scenario mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("perception worker stopped")]
    Worker,
}

/// Loop periods on a common tick of `dt` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub inference_period: f64,
    pub control_period: f64,
    pub inference_latency: f64,
    pub dt: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            inference_period: 0.5,
            control_period: 0.1,
            inference_latency: 0.3,
            dt: 0.01,
        }
    }
}

/// Periods expressed in whole ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ticks {
    pub inference: u64,
    pub control: u64,
    pub latency: u64,
}

impl ScheduleConfig {
    pub fn ticks(&self) -> Result<Ticks, RuntimeError> {
        let whole = |v: f64, name: &str| -> Result<u64, RuntimeError> {
            let n = (v / self.dt).round();
            if !(self.dt > 0.0) || n < 0.0 || ((n * self.dt) - v).abs() > 1e-9 {
                return Err(RuntimeError::Schedule(format!(
                    "{name} {v} is not a multiple of dt {}",
                    self.dt
                )));
            }
            Ok(n as u64)
        };
        let t = Ticks {
            inference: whole(self.inference_period, "inference_period")?,
            control: whole(self.control_period, "control_period")?,
            latency: whole(self.inference_latency, "inference_latency")?,
        };
        if t.control == 0 || t.control > t.inference || t.latency >= t.inference {
            return Err(RuntimeError::Schedule(
                "need 0 < control_period <= inference_period and latency < inference_period".into(),
            ));
        }
        Ok(t)
    }
}

/// Anything that maps an observation to a command sequence.
pub trait NavigationPolicy: Send + Sync {
    /// Number of history frames `P`.
    fn history(&self) -> usize;
    fn act(&self, input: &PolicyInput, seed: u64) -> Result<ActionSequence, PolicyError>;
}

impl NavigationPolicy for Policy {
    fn history(&self) -> usize {
        self.params.config.p
    }

    fn act(&self, input: &PolicyInput, seed: u64) -> Result<ActionSequence, PolicyError> {
        self.sample(input, seed)
    }
}

/// Emits the same sequence for every observation.
#[derive(Debug, Clone)]
pub struct FixedPolicy {
    pub p: usize,
    pub actions: ActionSequence,
}

impl FixedPolicy {
    pub fn zero(p: usize, q: usize) -> Self {
        Self {
            p,
            actions: ActionSequence::new(vec![VelocityCommand4::default(); q]),
        }
    }
}

impl NavigationPolicy for FixedPolicy {
    fn history(&self) -> usize {
        self.p
    }

    fn act(&self, _input: &PolicyInput, _seed: u64) -> Result<ActionSequence, PolicyError> {
        Ok(self.actions.clone())
    }
}

/// Relative bearing to the goal and progress ratio.
pub fn update_goal_signals(pose: &Pose4, goal: [f64; 3], total_distance: f64) -> GoalEncoding {
    assert!(total_distance > 0.0, "total distance must be positive");
    let (dx, dy) = (goal[0] - pose.x, goal[1] - pose.y);
    let d = wrap_angle(dy.atan2(dx) - pose.yaw);
    let s = progress(total_distance, dx.hypot(dy));
    encode_goal(d, s).expect("progress is clamped")
}

/// How a disturbance is triggered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// Fires once at this time.
    Time(f64),
    /// Fires each time the horizontal distance travelled grows by this much.
    Distance(f64),
}

/// External wrench `impulse / duration` applied for `duration` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEvent {
    pub trigger: Trigger,
    /// Body-frame impulse (N·s, N·m·s).
    pub impulse: [f64; 6],
    pub duration: f64,
}

impl DisturbanceEvent {
    pub fn heave(trigger: Trigger, impulse: f64) -> Self {
        Self {
            trigger,
            impulse: [0.0, 0.0, impulse, 0.0, 0.0, 0.0],
            duration: 1.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.impulse.iter().all(|v| v.is_finite())
            && self.duration > 0.0
            && match self.trigger {
                Trigger::Time(t) => t >= 0.0,
                Trigger::Distance(d) => d > 0.0,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Reached,
    Timeout,
    Stuck,
}

/// One line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Inference {
        id: u64,
        t_obs: f64,
        t_ready: f64,
        d: f64,
        s: f64,
    },
    Control {
        t: f64,
        eta: [f64; 6],
        nu: [f64; 6],
        command: [f64; 4],
        /// Inference id and action index, absent before the first result.
        source: Option<(u64, usize)>,
    },
    Collision {
        t: f64,
        kind: CollisionKind,
        position: [f64; 3],
    },
    Disturbance {
        t: f64,
        impulse: [f64; 6],
        duration: f64,
    },
    End {
        t: f64,
        outcome: Outcome,
    },
}

impl LogRecord {
    pub fn time(&self) -> f64 {
        match self {
            Self::Inference { t_obs, .. } => *t_obs,
            Self::Control { t, .. }
            | Self::Collision { t, .. }
            | Self::Disturbance { t, .. }
            | Self::End { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub outcome: Outcome,
    pub duration: f64,
    /// Obstacle and seabed events.
    pub collisions: usize,
    pub altitude_events: usize,
    pub path_length: f64,
    pub final_eta: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub records: Vec<LogRecord>,
    pub summary: EpisodeSummary,
}

impl TrajectoryLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }

    /// `(t, eta)` of every control record.
    pub fn states(&self) -> impl Iterator<Item = (f64, [f64; 6])> + '_ {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Control { t, eta, .. } => Some((*t, *eta)),
            _ => None,
        })
    }
}

/// Parses line-delimited records; errors carry the 1-based line number.
pub fn parse_jsonl(text: &str) -> Result<Vec<LogRecord>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub reached: bool,
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub trials: usize,
    pub succ_pct: f64,
    pub cf_pct: f64,
    /// Mean collisions over successful trials; `None` without successes.
    pub avg_collisions: Option<f64>,
}

/// Success is reaching the goal with fewer than three collisions.
pub fn metrics(trials: &[TrialOutcome]) -> MetricsReport {
    let n = trials.len();
    let success: Vec<&TrialOutcome> = trials
        .iter()
        .filter(|t| t.reached && t.collisions < 3)
        .collect();
    let cf = trials
        .iter()
        .filter(|t| t.reached && t.collisions == 0)
        .count();
    let pct = |k: usize| {
        if n == 0 {
            0.0
        } else {
            100.0 * k as f64 / n as f64
        }
    };
    MetricsReport {
        trials: n,
        succ_pct: pct(success.len()),
        cf_pct: pct(cf),
        avg_collisions: (!success.is_empty()).then(|| {
            success.iter().map(|t| t.collisions as f64).sum::<f64>() / success.len() as f64
        }),
    }
}

/// Deterministic 64-bit mix of two seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn goal_signal_examples() {
        let start = Pose4::new(0.0, 0.0, 0.5, 0.0);
        let g = update_goal_signals(&start, [4.0, 0.0, 0.5], 4.0);
        assert_eq!(g.s, 0.0);
        assert_eq!(g.sin, 0.0);
        assert_eq!(g.cos, 1.0);
        let at = update_goal_signals(&Pose4::new(4.0, 0.0, 0.5, 1.0), [4.0, 0.0, 0.5], 4.0);
        assert_eq!(at.s, 1.0);
        let left = update_goal_signals(&Pose4::new(0.0, 0.0, 0.5, 0.0), [0.0, 3.0, 0.5], 3.0);
        assert!((left.sin - 1.0).abs() < 1e-12);
        let facing =
            update_goal_signals(&Pose4::new(0.0, 0.0, 0.5, FRAC_PI_2), [0.0, 3.0, 0.5], 3.0);
        assert!(facing.sin.abs() < 1e-12 && (facing.cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_examples() {
        let mut t = vec![
            TrialOutcome {
                reached: true,
                collisions: 0
            };
            18
        ];
        t.push(TrialOutcome {
            reached: true,
            collisions: 3,
        });
        t.push(TrialOutcome {
            reached: false,
            collisions: 0,
        });
        let m = metrics(&t);
        assert_eq!(m.succ_pct, 90.0);
        assert_eq!(m.cf_pct, 90.0);
        assert_eq!(m.avg_collisions, Some(0.0));
        let all = metrics(
            &[TrialOutcome {
                reached: true,
                collisions: 0,
            }; 5],
        );
        assert_eq!(
            (all.succ_pct, all.cf_pct, all.avg_collisions),
            (100.0, 100.0, Some(0.0))
        );
        let none = metrics(&[TrialOutcome {
            reached: false,
            collisions: 1,
        }]);
        assert_eq!(none.avg_collisions, None);
    }

    #[test]
    fn default_schedule_ticks() {
        let t = ScheduleConfig::default().ticks().unwrap();
        assert_eq!((t.inference, t.control, t.latency), (50, 10, 30));
        let bad = ScheduleConfig {
            inference_latency: 0.6,
            ..ScheduleConfig::default()
        };
        assert!(bad.ticks().is_err());
    }

    #[test]
    fn log_lines_parse_back() {
        let log = vec![
            LogRecord::Inference {
                id: 0,
                t_obs: 0.0,
                t_ready: 0.3,
                d: 0.1,
                s: 0.0,
            },
            LogRecord::End {
                t: 1.0,
                outcome: Outcome::Timeout,
            },
        ];
        let text: String = log
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect();
        assert_eq!(parse_jsonl(&text).unwrap(), log);
        let broken = format!("{text}{{\"type\":\"end\"\n");
        assert_eq!(parse_jsonl(&broken).unwrap_err().0, 3);
    }

    proptest! {
        #[test]
        fn metrics_are_bounded(v in proptest::collection::vec((any::<bool>(), 0usize..6), 1..40)) {
            let t: Vec<TrialOutcome> = v.iter().map(|(r, c)| TrialOutcome { reached: *r, collisions: *c }).collect();
            let m = metrics(&t);
            prop_assert!((0.0..=100.0).contains(&m.succ_pct));
            prop_assert!(m.cf_pct <= m.succ_pct);
            let succ = t.iter().filter(|x| x.reached && x.collisions < 3).count();
            prop_assert!((m.succ_pct - 100.0 * succ as f64 / t.len() as f64).abs() < 1e-12);
            if let Some(ac) = m.avg_collisions {
                prop_assert!((0.0..3.0).contains(&ac));
            }
        }

        #[test]
        fn progress_signal_in_unit_interval(x in -5.0f64..5.0, y in -5.0f64..5.0, yaw in -4.0f64..4.0) {
            let g = update_goal_signals(&Pose4::new(x, y, 0.5, yaw), [2.0, 1.0, 0.5], 3.0);
            prop_assert!((0.0..=1.0).contains(&g.s));
        }
    }
}
