use std::collections::VecDeque;
use std::sync::mpsc;
use std::sync::{Condvar, Mutex};

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use super::{
    mix_seed, update_goal_signals, DisturbanceEvent, EpisodeSummary, LogRecord, NavigationPolicy,
    Outcome, RuntimeError, ScheduleConfig, TrajectoryLog, Trigger,
};
use crate::dynamics::{
    dynamics_step, ActionSequence, BodyState, ControlGains, PdController, VehicleParams,
    VelocityCommand4,
};
use crate::features::{pad_history, ExtractorKind, FeatureExtractor, GoalEncoding, RawFeatureMap};
use crate::geometry::Pose;
use crate::imaging::WaterType;
use crate::policy::{PolicyError, PolicyInput};
use crate::world::{raycast_depth, CameraModel, CollisionMonitor, Scenario};

const SAMPLE_TAG: u64 = 0x5341_4d50;

/// Whether perception runs inline on the virtual clock or on its own thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Interleaved,
    Concurrent,
}

/// Commands for axes the policy does not drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Script {
    Hold,
    /// Surge velocity producing `x(t) = amplitude·sin(2πt/period)`.
    SurgeOscillation {
        amplitude: f64,
        period: f64,
    },
}

impl Script {
    fn command(&self, t: f64) -> VelocityCommand4 {
        match *self {
            Script::Hold => VelocityCommand4::default(),
            Script::SurgeOscillation { amplitude, period } => {
                let w = 2.0 * std::f64::consts::PI / period;
                VelocityCommand4::new(amplitude * w * (w * t).cos(), 0.0, 0.0, 0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub schedule: ScheduleConfig,
    pub camera: CameraModel,
    pub vehicle: VehicleParams,
    pub gains: ControlGains,
    pub max_time: f64,
    pub goal_radius: f64,
    pub stop_at_goal: bool,
    /// No progress beyond `stuck_distance` over this many seconds ends the
    /// run; zero disables the check.
    pub stuck_window: f64,
    pub stuck_distance: f64,
    pub collision_window: f64,
    /// Policy axes `(x, y, z, ψ)` that are executed; the others follow `script`.
    pub axis_mask: [bool; 4],
    pub script: Script,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            camera: CameraModel::default(),
            vehicle: VehicleParams::default(),
            gains: ControlGains::default(),
            max_time: 40.0,
            goal_radius: 1.0,
            stop_at_goal: true,
            stuck_window: 10.0,
            stuck_distance: 0.05,
            collision_window: 1.0,
            axis_mask: [true; 4],
            script: Script::Hold,
        }
    }
}

/// Index into a sequence observed at `obs_tick` when executed at `exec_tick`;
/// past the end the last action is held.
pub fn action_index(exec_tick: u64, obs_tick: u64, control_ticks: u64, q: usize) -> usize {
    let i = ((exec_tick - obs_tick) / control_ticks) as usize;
    i.min(q.saturating_sub(1))
}

struct Capture {
    id: u64,
    tick: u64,
    pose: Pose,
    goal: GoalEncoding,
}

struct Completed {
    id: u64,
    tick: u64,
    actions: Result<ActionSequence, PolicyError>,
}

struct Perception<'a> {
    policy: &'a dyn NavigationPolicy,
    extractor: &'a dyn FeatureExtractor,
    scenario: &'a Scenario,
    camera: CameraModel,
    seed: u64,
    reference: Option<(RawFeatureMap, GoalEncoding)>,
    history: Vec<(RawFeatureMap, GoalEncoding)>,
}

impl Perception<'_> {
    fn process(&mut self, c: Capture) -> Completed {
        let depth = raycast_depth(self.scenario, &c.pose, &self.camera);
        let feat = self.extractor.extract(&depth, mix_seed(self.seed, c.tick));
        let p = self.policy.history();
        if self.reference.is_none() {
            self.reference = Some((feat.clone(), c.goal));
        }
        self.history.push((feat, c.goal));
        if self.history.len() > p {
            self.history.remove(0);
        }
        let (rf, rg) = self.reference.clone().expect("reference set above");
        let hist = pad_history(&self.history, p);
        let mut frames = vec![rf];
        let mut goals = vec![rg];
        for (f, g) in hist {
            frames.push(f);
            goals.push(g);
        }
        let input = PolicyInput { frames, goals };
        Completed {
            id: c.id,
            tick: c.tick,
            actions: self
                .policy
                .act(&input, mix_seed(self.seed ^ SAMPLE_TAG, c.id)),
        }
    }
}

trait Backend {
    fn submit(&mut self, c: Capture) -> Result<(), RuntimeError>;
    fn collect(&mut self, id: u64) -> Result<Completed, RuntimeError>;
}

struct Inline<'a> {
    perception: Perception<'a>,
    done: Option<Completed>,
}

impl Backend for Inline<'_> {
    fn submit(&mut self, c: Capture) -> Result<(), RuntimeError> {
        self.done = Some(self.perception.process(c));
        Ok(())
    }

    fn collect(&mut self, id: u64) -> Result<Completed, RuntimeError> {
        match self.done.take() {
            Some(c) if c.id == id => Ok(c),
            _ => Err(RuntimeError::Worker),
        }
    }
}

/// Single-slot latest-value mailbox.
struct Mailbox {
    slot: Mutex<Option<Completed>>,
    ready: Condvar,
}

struct Threaded<'m> {
    tx: Option<mpsc::Sender<Capture>>,
    mailbox: &'m Mailbox,
}

impl Backend for Threaded<'_> {
    fn submit(&mut self, c: Capture) -> Result<(), RuntimeError> {
        self.tx
            .as_ref()
            .ok_or(RuntimeError::Worker)?
            .send(c)
            .map_err(|_| RuntimeError::Worker)
    }

    /// Waits for the virtual completion event of inference `id`.
    fn collect(&mut self, id: u64) -> Result<Completed, RuntimeError> {
        let mut slot = self.mailbox.slot.lock().map_err(|_| RuntimeError::Worker)?;
        loop {
            if slot.as_ref().is_some_and(|c| c.id == id) {
                return Ok(slot.take().expect("checked above"));
            }
            slot = self
                .mailbox
                .ready
                .wait(slot)
                .map_err(|_| RuntimeError::Worker)?;
        }
    }
}

/// Closed-loop rollout of `policy` in `scenario`.
///
/// Perception captures a frame every inference period and its action
/// sequence becomes usable `inference_latency` later; control reads the most
/// recent completed sequence every control period, indexes it by the time
/// elapsed since its observation and tracks the command with the PD loop at
/// the dynamics step.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    policy: &dyn NavigationPolicy,
    scenario: &Scenario,
    water: Option<WaterType>,
    extractor: ExtractorKind,
    cfg: &EpisodeConfig,
    seed: u64,
    disturbances: &[DisturbanceEvent],
    mode: RunMode,
) -> Result<TrajectoryLog, RuntimeError> {
    scenario.validate()?;
    cfg.camera.validate()?;
    if let Some(d) = disturbances.iter().find(|d| !d.is_valid()) {
        return Err(RuntimeError::Mismatch(format!("invalid disturbance {d:?}")));
    }
    let extractor = extractor.build(water);
    let perception = Perception {
        policy,
        extractor: extractor.as_ref(),
        scenario,
        camera: cfg.camera,
        seed,
        reference: None,
        history: Vec::new(),
    };
    match mode {
        RunMode::Interleaved => {
            let mut b = Inline {
                perception,
                done: None,
            };
            simulate(&mut b, scenario, cfg, disturbances)
        }
        RunMode::Concurrent => {
            let mailbox = Mailbox {
                slot: Mutex::new(None),
                ready: Condvar::new(),
            };
            let (tx, rx) = mpsc::channel::<Capture>();
            std::thread::scope(|s| {
                let mb = &mailbox;
                let mut perception = perception;
                s.spawn(move || {
                    while let Ok(c) = rx.recv() {
                        let done = perception.process(c);
                        if let Ok(mut slot) = mb.slot.lock() {
                            *slot = Some(done);
                            mb.ready.notify_all();
                        }
                    }
                });
                let mut b = Threaded {
                    tx: Some(tx),
                    mailbox: &mailbox,
                };
                let out = simulate(&mut b, scenario, cfg, disturbances);
                b.tx = None;
                out
            })
        }
    }
}

fn simulate(
    backend: &mut dyn Backend,
    scenario: &Scenario,
    cfg: &EpisodeConfig,
    disturbances: &[DisturbanceEvent],
) -> Result<TrajectoryLog, RuntimeError> {
    let ticks = cfg.schedule.ticks()?;
    let dt = cfg.schedule.dt;
    let max_ticks = (cfg.max_time / dt).round() as u64;
    let goal = scenario.goal;
    let start = scenario.start;
    let total = (goal[0] - start.x).hypot(goal[1] - start.y);
    if !(total > 0.0) {
        return Err(RuntimeError::Mismatch(
            "goal coincides with the start".into(),
        ));
    }
    let z_ref = scenario.altitude(&start.position());
    let mut state = BodyState::at_rest(start);
    let mut pd = PdController::new(cfg.gains.clone(), dt);
    let mut monitor = CollisionMonitor::new(cfg.collision_window);
    let mut records = Vec::new();
    let mut next_id = 0u64;
    let mut pending: Option<(u64, u64)> = None;
    let mut active: Option<(u64, u64, ActionSequence)> = None;
    let mut cmd = VelocityCommand4::default();
    let mut forces: Vec<(u64, Vector6<f64>)> = Vec::new();
    let mut fired = vec![false; disturbances.len()];
    let mut next_distance: Vec<f64> = disturbances
        .iter()
        .map(|d| match d.trigger {
            Trigger::Distance(s) => s,
            Trigger::Time(_) => f64::INFINITY,
        })
        .collect();
    let mut travelled = 0.0;
    let mut trail: VecDeque<(u64, [f64; 2])> = VecDeque::new();
    let outcome;
    let mut tick = 0u64;
    loop {
        let t = tick as f64 * dt;
        if tick.is_multiple_of(ticks.inference) {
            let pose = state.pose();
            let g = update_goal_signals(&pose.to_pose4(), goal, total);
            records.push(LogRecord::Inference {
                id: next_id,
                t_obs: t,
                t_ready: (tick + ticks.latency) as f64 * dt,
                d: g.sin.atan2(g.cos),
                s: g.s,
            });
            backend.submit(Capture {
                id: next_id,
                tick,
                pose,
                goal: g,
            })?;
            pending = Some((next_id, tick + ticks.latency));
            next_id += 1;
        }
        if let Some((id, ready)) = pending {
            if ready == tick {
                let c = backend.collect(id)?;
                active = Some((c.id, c.tick, c.actions?));
                pending = None;
            }
        }
        for (i, d) in disturbances.iter().enumerate() {
            let fire = match d.trigger {
                Trigger::Time(at) => !fired[i] && tick == (at / dt).round() as u64,
                Trigger::Distance(_) => travelled >= next_distance[i],
            };
            if fire {
                fired[i] = true;
                if let Trigger::Distance(s) = d.trigger {
                    next_distance[i] += s;
                }
                let n = ((d.duration / dt).round() as u64).max(1);
                forces.push((
                    tick + n,
                    Vector6::from_row_slice(&d.impulse) / (n as f64 * dt),
                ));
                records.push(LogRecord::Disturbance {
                    t,
                    impulse: d.impulse,
                    duration: n as f64 * dt,
                });
            }
        }
        if tick.is_multiple_of(ticks.control) {
            let (policy_cmd, source) = match &active {
                Some((id, obs, seq)) => {
                    let i = action_index(tick, *obs, ticks.control, seq.len());
                    (seq.actions[i], Some((*id, i)))
                }
                None => (VelocityCommand4::default(), None),
            };
            let scripted = cfg.script.command(t).to_array();
            let p = policy_cmd.to_array();
            cmd = VelocityCommand4::from_array(std::array::from_fn(|a| {
                if cfg.axis_mask[a] {
                    p[a]
                } else {
                    scripted[a]
                }
            }));
            records.push(LogRecord::Control {
                t,
                eta: state.eta.into(),
                nu: state.nu.into(),
                command: cmd.to_array(),
                source,
            });
            if cfg.stuck_window > 0.0 {
                let w = cfg.stuck_window;
                let wt = (w / dt).round() as u64;
                trail.push_back((tick, [state.eta[0], state.eta[1]]));
                while trail.front().is_some_and(|(k, _)| tick - k > wt) {
                    trail.pop_front();
                }
                if let Some((k, p0)) = trail.front() {
                    let moved = (state.eta[0] - p0[0]).hypot(state.eta[1] - p0[1]);
                    if tick - k == wt && moved < cfg.stuck_distance {
                        outcome = Outcome::Stuck;
                        break;
                    }
                }
            }
        }
        let pos = state.position();
        let dist = (pos - nalgebra::Vector3::from(goal)).norm();
        if cfg.stop_at_goal && dist <= cfg.goal_radius {
            outcome = Outcome::Reached;
            break;
        }
        if tick >= max_ticks {
            outcome = Outcome::Timeout;
            break;
        }
        forces.retain(|(end, _)| *end > tick);
        let external: Vector6<f64> = forces.iter().map(|(_, f)| f).sum();
        let tau = pd.update(&cmd.to_nu(), &state) + external;
        let prev = pos;
        state = dynamics_step(&state, &tau, &cfg.vehicle, dt)?;
        let now = state.position();
        travelled += (now.x - prev.x).hypot(now.y - prev.y);
        tick += 1;
        for ev in monitor.observe(scenario, tick as f64 * dt, &now, Some(z_ref)) {
            records.push(LogRecord::Collision {
                t: ev.time,
                kind: ev.kind,
                position: ev.position,
            });
        }
    }
    let t_end = tick as f64 * dt;
    records.push(LogRecord::End { t: t_end, outcome });
    let report = monitor.into_report();
    let collisions = report.collisions();
    let altitude_events = report.events.len() - collisions;
    Ok(TrajectoryLog {
        records,
        summary: EpisodeSummary {
            outcome,
            duration: t_end,
            collisions,
            altitude_events,
            path_length: travelled,
            final_eta: state.eta.into(),
        },
    })
}
