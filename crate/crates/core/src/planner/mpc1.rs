use serde::{Deserialize, Serialize};

use super::{PlannerError, VelocityPlan, WaypointPath, V_MAX};
use crate::dynamics::{kinematic_step, VelocityCommand4};
use crate::geometry::{wrap_angle, Pose4};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    /// Prediction horizon `T_p` in steps.
    pub horizon: usize,
    pub lambda0: f64,
    pub v_max: [f64; 4],
    /// Waypoint-advance radius on position.
    pub epsilon: f64,
    pub dt: f64,
    pub yaw_weight: f64,
    /// Receding-horizon step cap.
    pub max_steps: usize,
    pub max_iters: usize,
    /// Projected-gradient norm at which a horizon solve stops.
    pub tolerance: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            lambda0: 0.1,
            v_max: V_MAX,
            epsilon: 0.2,
            dt: 0.1,
            yaw_weight: 0.1,
            max_steps: 3000,
            max_iters: 500,
            tolerance: 1e-6,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let ok = self.horizon >= 1
            && self.lambda0 >= 0.0
            && self.v_max.iter().all(|v| *v > 0.0)
            && self.epsilon > 0.0
            && self.dt > 0.0
            && self.yaw_weight >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(PlannerError::InvalidInput(format!(
                "invalid MPC configuration {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    pub commands: Vec<[f64; 4]>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn step(p: [f64; 4], u: [f64; 4], dt: f64) -> [f64; 4] {
    let (s, c) = p[3].sin_cos();
    [
        p[0] + dt * (u[0] * c - u[1] * s),
        p[1] + dt * (u[0] * s + u[1] * c),
        p[2] + dt * u[2],
        wrap_angle(p[3] + dt * u[3]),
    ]
}

fn pose_arr(p: &Pose4) -> [f64; 4] {
    [p.x, p.y, p.z, p.yaw]
}

/// Tracking plus smoothness cost of a command sequence over the horizon.
pub fn horizon_cost(
    p0: &Pose4,
    target: &Pose4,
    prev: [f64; 4],
    u: &[[f64; 4]],
    cfg: &MpcConfig,
) -> f64 {
    cost_and_grad(pose_arr(p0), pose_arr(target), prev, u, cfg, None)
}

fn cost_and_grad(
    p0: [f64; 4],
    w: [f64; 4],
    prev: [f64; 4],
    u: &[[f64; 4]],
    cfg: &MpcConfig,
    grad: Option<&mut [[f64; 4]]>,
) -> f64 {
    let t = u.len();
    let mut ps = Vec::with_capacity(t + 1);
    ps.push(p0);
    let mut cost = 0.0;
    for m in 0..t {
        let p = step(ps[m], u[m], cfg.dt);
        let e = [
            p[0] - w[0],
            p[1] - w[1],
            p[2] - w[2],
            wrap_angle(p[3] - w[3]),
        ];
        cost += e[0] * e[0] + e[1] * e[1] + e[2] * e[2] + cfg.yaw_weight * e[3] * e[3];
        let before = if m == 0 { prev } else { u[m - 1] };
        for i in 0..4 {
            let d = u[m][i] - before[i];
            cost += cfg.lambda0 * d * d;
        }
        ps.push(p);
    }
    let Some(g) = grad else { return cost };

    let mut adj = [0.0; 4];
    for m in (0..t).rev() {
        let p1 = ps[m + 1];
        let e = [
            p1[0] - w[0],
            p1[1] - w[1],
            p1[2] - w[2],
            wrap_angle(p1[3] - w[3]),
        ];
        adj[0] += 2.0 * e[0];
        adj[1] += 2.0 * e[1];
        adj[2] += 2.0 * e[2];
        adj[3] += 2.0 * cfg.yaw_weight * e[3];
        let (s, c) = ps[m][3].sin_cos();
        let dt = cfg.dt;
        g[m] = [
            dt * (c * adj[0] + s * adj[1]),
            dt * (-s * adj[0] + c * adj[1]),
            dt * adj[2],
            dt * adj[3],
        ];
        let before = if m == 0 { prev } else { u[m - 1] };
        for i in 0..4 {
            g[m][i] += 2.0 * cfg.lambda0 * (u[m][i] - before[i]);
            if m + 1 < t {
                g[m][i] -= 2.0 * cfg.lambda0 * (u[m + 1][i] - u[m][i]);
            }
        }
        let dx = dt * (-s * u[m][0] - c * u[m][1]);
        let dy = dt * (c * u[m][0] - s * u[m][1]);
        adj[3] += adj[0] * dx + adj[1] * dy;
    }
    cost
}

fn project(u: &mut [[f64; 4]], vmax: [f64; 4]) {
    for c in u.iter_mut() {
        for i in 0..4 {
            c[i] = c[i].clamp(-vmax[i], vmax[i]);
        }
    }
}

fn dot(a: &[[f64; 4]], b: &[[f64; 4]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (0..4).map(|i| x[i] * y[i]).sum::<f64>())
        .sum()
}

/// Projected gradient descent with Barzilai–Borwein steps and Armijo backtracking.
pub fn solve_horizon(
    p0: &Pose4,
    target: &Pose4,
    prev: [f64; 4],
    warm: &[[f64; 4]],
    cfg: &MpcConfig,
) -> HorizonSolution {
    let (p0, w) = (pose_arr(p0), pose_arr(target));
    let t = cfg.horizon;
    let mut u: Vec<[f64; 4]> = (0..t)
        .map(|m| warm.get(m).copied().unwrap_or([0.0; 4]))
        .collect();
    project(&mut u, cfg.v_max);
    let mut g = vec![[0.0; 4]; t];
    let mut f = cost_and_grad(p0, w, prev, &u, cfg, Some(&mut g));
    let mut alpha = 1.0;
    let mut trial = vec![[0.0; 4]; t];
    let mut g_new = vec![[0.0; 4]; t];
    for it in 0..cfg.max_iters {
        let mut pg = u.clone();
        for (p, gi) in pg.iter_mut().zip(&g) {
            for i in 0..4 {
                p[i] -= gi[i];
            }
        }
        project(&mut pg, cfg.v_max);
        let pg_norm = u
            .iter()
            .zip(&pg)
            .map(|(a, b)| (0..4).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if pg_norm < cfg.tolerance {
            return HorizonSolution {
                commands: u,
                cost: f,
                iterations: it,
                converged: true,
            };
        }
        let mut a = alpha;
        let mut f_new;
        loop {
            for m in 0..t {
                for i in 0..4 {
                    trial[m][i] = u[m][i] - a * g[m][i];
                }
            }
            project(&mut trial, cfg.v_max);
            let d: Vec<[f64; 4]> = trial
                .iter()
                .zip(&u)
                .map(|(x, y)| std::array::from_fn(|i| x[i] - y[i]))
                .collect();
            f_new = cost_and_grad(p0, w, prev, &trial, cfg, None);
            if f_new <= f + 1e-4 * dot(&g, &d) || a < 1e-12 {
                break;
            }
            a *= 0.5;
        }
        cost_and_grad(p0, w, prev, &trial, cfg, Some(&mut g_new));
        let s: Vec<[f64; 4]> = trial
            .iter()
            .zip(&u)
            .map(|(x, y)| std::array::from_fn(|i| x[i] - y[i]))
            .collect();
        let y: Vec<[f64; 4]> = g_new
            .iter()
            .zip(&g)
            .map(|(x, y)| std::array::from_fn(|i| x[i] - y[i]))
            .collect();
        let sy = dot(&s, &y);
        alpha = if sy > 1e-16 {
            (dot(&s, &s) / sy).clamp(1e-6, 1e6)
        } else {
            1.0
        };
        std::mem::swap(&mut u, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
    }
    HorizonSolution {
        commands: u,
        cost: f,
        iterations: cfg.max_iters,
        converged: false,
    }
}

fn near(p: &Pose4, w: &Pose4, eps: f64) -> bool {
    (p.position() - w.position()).norm() < eps
}

/// Receding-horizon rollout that tracks the waypoints in order.
pub fn generate_velocity_plan(
    path: &WaypointPath,
    start: &Pose4,
    cfg: &MpcConfig,
) -> Result<VelocityPlan, PlannerError> {
    cfg.validate()?;
    if path.is_empty() {
        return Err(PlannerError::InvalidInput("empty waypoint path".into()));
    }
    let wps = &path.waypoints;
    let last = wps.len() - 1;
    let mut plan = VelocityPlan {
        dt: cfg.dt,
        commands: Vec::new(),
        poses: vec![*start],
        waypoint_index: Vec::new(),
    };
    let mut p = *start;
    let mut n = 0usize;
    let mut prev = [0.0; 4];
    let mut warm: Vec<[f64; 4]> = Vec::new();
    loop {
        while n < last && near(&p, &wps[n], cfg.epsilon) {
            n += 1;
        }
        if n == last && near(&p, &wps[n], cfg.epsilon) {
            return Ok(plan);
        }
        if plan.len() >= cfg.max_steps {
            return Err(PlannerError::NonConvergence {
                steps: plan.len(),
                waypoint: n,
                total: wps.len(),
                partial: Box::new(plan),
            });
        }
        let sol = solve_horizon(&p, &wps[n], prev, &warm, cfg);
        let u = sol.commands[0];
        let cmd = VelocityCommand4::from_array(u);
        p = kinematic_step(p, cmd, cfg.dt);
        plan.commands.push(cmd);
        plan.poses.push(p);
        plan.waypoint_index.push(n);
        prev = u;
        warm = sol.commands[1..].to_vec();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjoint_gradient_matches_differences() {
        let cfg = MpcConfig {
            horizon: 5,
            ..MpcConfig::default()
        };
        let p0 = [0.1, -0.2, 0.4, 0.7];
        let w = [1.0, 0.5, 0.3, -0.4];
        let prev = [0.1, 0.0, -0.05, 0.02];
        let u: Vec<[f64; 4]> = (0..5)
            .map(|m| [0.3 - 0.05 * m as f64, 0.1, -0.02 * m as f64, 0.05])
            .collect();
        let mut g = vec![[0.0; 4]; 5];
        cost_and_grad(p0, w, prev, &u, &cfg, Some(&mut g));
        let h = 1e-6;
        for m in 0..5 {
            for i in 0..4 {
                let mut a = u.clone();
                let mut b = u.clone();
                a[m][i] += h;
                b[m][i] -= h;
                let fd = (cost_and_grad(p0, w, prev, &a, &cfg, None)
                    - cost_and_grad(p0, w, prev, &b, &cfg, None))
                    / (2.0 * h);
                assert!(
                    (fd - g[m][i]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "({m},{i}) {fd} vs {}",
                    g[m][i]
                );
            }
        }
    }

    #[test]
    fn start_at_single_waypoint_gives_empty_plan() {
        let p = Pose4::new(1.0, 2.0, 0.5, 0.3);
        let path = WaypointPath { waypoints: vec![p] };
        let plan = generate_velocity_plan(&path, &p, &MpcConfig::default()).unwrap();
        assert!(plan.is_empty());
        assert_eq!(plan.poses, vec![p]);
    }

    #[test]
    fn unreachable_within_cap_returns_partial_plan() {
        let path = WaypointPath {
            waypoints: vec![Pose4::new(50.0, 0.0, 0.0, 0.0)],
        };
        let cfg = MpcConfig {
            max_steps: 20,
            ..MpcConfig::default()
        };
        match generate_velocity_plan(&path, &Pose4::default(), &cfg) {
            Err(PlannerError::NonConvergence { partial, steps, .. }) => {
                assert_eq!(steps, 20);
                assert_eq!(partial.len(), 20);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn larger_smoothness_weight_gives_smoother_solution() {
        let p0 = Pose4::default();
        let w = Pose4::new(0.4, 0.3, -0.1, 0.0);
        let roughness = |lambda0: f64| {
            let cfg = MpcConfig {
                lambda0,
                ..MpcConfig::default()
            };
            let sol = solve_horizon(&p0, &w, [0.0; 4], &[], &cfg);
            let mut r = sol.commands[0].iter().map(|v| v * v).sum::<f64>();
            for k in 1..sol.commands.len() {
                r += (0..4)
                    .map(|i| (sol.commands[k][i] - sol.commands[k - 1][i]).powi(2))
                    .sum::<f64>();
            }
            r
        };
        let rs: Vec<f64> = [0.0, 0.1, 1.0, 10.0, 100.0]
            .iter()
            .map(|l| roughness(*l))
            .collect();
        for w in rs.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{rs:?}");
        }
        assert!(rs[4] < 1e-2 * rs[0], "{rs:?}");
    }
}
