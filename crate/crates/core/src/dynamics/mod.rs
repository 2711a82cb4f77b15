//! Rigid-body vehicle model, 4-DoF kinematics and the velocity PD loop.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_zyx, wrap_angle, Pose, Pose4};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("non-finite state after integration: eta={eta:?} nu={nu:?} tau={tau:?}")]
    NonFinite {
        eta: [f64; 6],
        nu: [f64; 6],
        tau: [f64; 6],
    },
    #[error("mass matrix is singular")]
    Singular,
}

/// Pose `eta = (x, y, z, roll, pitch, yaw)` and body velocity `nu = (u, v, w, p, q, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub eta: Vector6<f64>,
    pub nu: Vector6<f64>,
}

impl BodyState {
    pub fn at_rest(pose: Pose4) -> Self {
        Self {
            eta: Vector6::new(pose.x, pose.y, pose.z, 0.0, 0.0, pose.yaw),
            nu: Vector6::zeros(),
        }
    }

    pub fn pose(&self) -> Pose {
        Pose {
            x: self.eta[0],
            y: self.eta[1],
            z: self.eta[2],
            roll: self.eta[3],
            pitch: self.eta[4],
            yaw: self.eta[5],
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.eta[0], self.eta[1], self.eta[2])
    }
}

/// Body-frame 4-DoF velocity command: surge, sway, heave, yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand4 {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub vpsi: f64,
}

impl VelocityCommand4 {
    pub fn new(vx: f64, vy: f64, vz: f64, vpsi: f64) -> Self {
        Self { vx, vy, vz, vpsi }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.vx, self.vy, self.vz, self.vpsi]
    }

    /// Body velocity reference with roll and pitch rates held at zero.
    pub fn to_nu(self) -> Vector6<f64> {
        Vector6::new(self.vx, self.vy, self.vz, 0.0, 0.0, self.vpsi)
    }

    pub fn within(self, vmax: [f64; 4]) -> bool {
        self.to_array().iter().zip(vmax).all(|(v, m)| v.abs() <= m)
    }
}

/// `Q` consecutive velocity commands at the control period.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionSequence {
    pub actions: Vec<VelocityCommand4>,
}

impl ActionSequence {
    pub fn new(actions: Vec<VelocityCommand4>) -> Self {
        Self { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Row-major `Q×4` values.
    pub fn to_flat(&self) -> Vec<f64> {
        self.actions.iter().flat_map(|a| a.to_array()).collect()
    }

    pub fn from_flat(values: &[f64]) -> Self {
        assert!(
            values.len().is_multiple_of(4),
            "flat action length must be a multiple of 4"
        );
        Self {
            actions: values
                .chunks_exact(4)
                .map(|c| VelocityCommand4::from_array([c[0], c[1], c[2], c[3]]))
                .collect(),
        }
    }

    pub fn clamped(&self, vmax: [f64; 4]) -> Self {
        Self {
            actions: self
                .actions
                .iter()
                .map(|a| {
                    let v = a.to_array();
                    VelocityCommand4::from_array(std::array::from_fn(|i| {
                        v[i].clamp(-vmax[i], vmax[i])
                    }))
                })
                .collect(),
        }
    }

    pub fn within(&self, vmax: [f64; 4]) -> bool {
        self.actions.iter().all(|a| a.within(vmax))
    }
}

/// `p' = p + dt·J(ψ)·cmd`, yaw wrapped.
pub fn kinematic_step(p: Pose4, cmd: VelocityCommand4, dt: f64) -> Pose4 {
    let (s, c) = p.yaw.sin_cos();
    Pose4 {
        x: p.x + dt * (cmd.vx * c - cmd.vy * s),
        y: p.y + dt * (cmd.vx * s + cmd.vy * c),
        z: p.z + dt * cmd.vz,
        yaw: wrap_angle(p.yaw + dt * cmd.vpsi),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub mass: f64,
    /// Principal moments about the centre of gravity.
    pub inertia: [f64; 3],
    pub r_g: [f64; 3],
    pub r_b: [f64; 3],
    pub added_mass: [f64; 6],
    pub linear_damping: [f64; 6],
    pub quadratic_damping: [f64; 6],
    pub weight: f64,
    pub buoyancy: f64,
}

impl Default for VehicleParams {
    /// BlueROV2 Heavy class values, neutrally buoyant.
    fn default() -> Self {
        let mass = 11.5;
        Self {
            mass,
            inertia: [0.26, 0.23, 0.37],
            r_g: [0.0, 0.0, 0.0],
            r_b: [0.0, 0.0, 0.02],
            added_mass: [6.36, 7.12, 18.68, 0.189, 0.135, 0.222],
            linear_damping: [13.7, 0.0, 33.0, 0.0, 0.8, 0.0],
            quadratic_damping: [141.0, 217.0, 190.0, 1.19, 0.47, 1.5],
            weight: mass * GRAVITY,
            buoyancy: mass * GRAVITY,
        }
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl VehicleParams {
    pub fn rigid_body_mass(&self) -> Matrix6<f64> {
        let rg = Vector3::from(self.r_g);
        let s = skew(&rg);
        let m = self.mass;
        let ig = Matrix3::from_diagonal(&Vector3::from(self.inertia));
        let io = ig - m * s * s;
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() * m));
        out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-m * s));
        out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(m * s));
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&io);
        out
    }

    /// `M = M_rb + M_a`.
    pub fn mass_matrix(&self) -> Matrix6<f64> {
        self.rigid_body_mass() + Matrix6::from_diagonal(&Vector6::from(self.added_mass))
    }

    pub fn damping(&self, nu: &Vector6<f64>) -> Matrix6<f64> {
        Matrix6::from_fn(|i, j| {
            if i == j {
                self.linear_damping[i] + self.quadratic_damping[i] * nu[i].abs()
            } else {
                0.0
            }
        })
    }

    /// Restoring forces and moments in the body frame.
    pub fn restoring(&self, eta: &Vector6<f64>) -> Vector6<f64> {
        let r = rotation_zyx(eta[3], eta[4], eta[5]);
        let fg = r.transpose() * Vector3::new(0.0, 0.0, -self.weight);
        let fb = r.transpose() * Vector3::new(0.0, 0.0, self.buoyancy);
        let mg = Vector3::from(self.r_g).cross(&fg);
        let mb = Vector3::from(self.r_b).cross(&fb);
        let f = fg + fb;
        let m = mg + mb;
        -Vector6::new(f.x, f.y, f.z, m.x, m.y, m.z)
    }

    pub fn validate(&self) -> bool {
        let m = self.mass_matrix();
        let sym = (m - m.transpose()).norm() < 1e-12;
        let pd = m.cholesky().is_some();
        sym && pd
            && self.linear_damping.iter().all(|d| *d >= 0.0)
            && self.quadratic_damping.iter().all(|d| *d >= 0.0)
    }
}

/// Coriolis–centripetal matrix built from a symmetric mass matrix; skew-symmetric for every `nu`.
pub fn coriolis(m: &Matrix6<f64>, nu: &Vector6<f64>) -> Matrix6<f64> {
    let n1 = nu.fixed_rows::<3>(0).into_owned();
    let n2 = nu.fixed_rows::<3>(3).into_owned();
    let m11 = m.fixed_view::<3, 3>(0, 0);
    let m12 = m.fixed_view::<3, 3>(0, 3);
    let m21 = m.fixed_view::<3, 3>(3, 0);
    let m22 = m.fixed_view::<3, 3>(3, 3);
    let a = skew(&(m11 * n1 + m12 * n2));
    let b = skew(&(m21 * n1 + m22 * n2));
    let mut c = Matrix6::zeros();
    c.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-a));
    c.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-a));
    c.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-b));
    c
}

/// `eta_dot = J(eta)·nu` with ZYX Euler angles.
pub fn kinematics(eta: &Vector6<f64>, nu: &Vector6<f64>) -> Vector6<f64> {
    let (phi, theta, psi) = (eta[3], eta[4], eta[5]);
    let r = rotation_zyx(phi, theta, psi);
    let lin = r * nu.fixed_rows::<3>(0);
    let (sf, cf) = phi.sin_cos();
    let (ct, tt) = (theta.cos(), theta.tan());
    let t = Matrix3::new(1.0, sf * tt, cf * tt, 0.0, cf, -sf, 0.0, sf / ct, cf / ct);
    let ang = t * nu.fixed_rows::<3>(3);
    Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z)
}

/// Kinetic energy `½ νᵀ M ν`.
pub fn kinetic_energy(params: &VehicleParams, nu: &Vector6<f64>) -> f64 {
    0.5 * nu.dot(&(params.mass_matrix() * nu))
}

/// One step of `Mν̇ + C(ν)ν + D(ν)ν + g(η) = τ`.
///
/// Velocity update: Coriolis term by the trapezoidal rule, damping implicit,
/// with `C` and `D` frozen at the current velocity; pose update uses the new
/// velocity.
pub fn dynamics_step(
    state: &BodyState,
    tau: &Vector6<f64>,
    params: &VehicleParams,
    dt: f64,
) -> Result<BodyState, DynamicsError> {
    let m = params.mass_matrix();
    let c = coriolis(&m, &state.nu);
    let d = params.damping(&state.nu);
    let g = params.restoring(&state.eta);
    let lhs = m + c * (0.5 * dt) + d * dt;
    let rhs = (m - c * (0.5 * dt)) * state.nu + (tau - g) * dt;
    let nu = lhs.lu().solve(&rhs).ok_or(DynamicsError::Singular)?;
    let mut eta = state.eta + kinematics(&state.eta, &nu) * dt;
    for k in 3..6 {
        eta[k] = wrap_angle(eta[k]);
    }
    if eta.iter().chain(nu.iter()).any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite {
            eta: eta.into(),
            nu: nu.into(),
            tau: (*tau).into(),
        });
    }
    Ok(BodyState { eta, nu })
}

/// Instantaneous velocity change from an impulse `J` (N·s, N·m·s): `Δν = M⁻¹J`.
pub fn apply_impulse(
    state: &BodyState,
    impulse: &Vector6<f64>,
    params: &VehicleParams,
) -> BodyState {
    let dnu = params
        .mass_matrix()
        .lu()
        .solve(impulse)
        .expect("mass matrix is positive definite");
    BodyState {
        eta: state.eta,
        nu: state.nu + dnu,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlGains {
    pub kp: [f64; 6],
    pub kd: [f64; 6],
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            kp: [2000.0, 2000.0, 1000.0, 20.0, 20.0, 20.0],
            kd: [2.0, 2.0, 2.0, 0.05, 0.05, 0.05],
        }
    }
}

/// `τ = k_p·e + k_d·ė` with `e = ν_ref − ν`.
pub fn pd_control(
    nu_ref: &Vector6<f64>,
    state: &BodyState,
    e_dot: &Vector6<f64>,
    gains: &ControlGains,
) -> Vector6<f64> {
    let e = nu_ref - state.nu;
    Vector6::from_fn(|i, _| gains.kp[i] * e[i] + gains.kd[i] * e_dot[i])
}

/// PD loop that estimates `ė` by backward difference at its call period.
#[derive(Debug, Clone)]
pub struct PdController {
    pub gains: ControlGains,
    pub dt: f64,
    prev_error: Option<Vector6<f64>>,
}

impl PdController {
    pub fn new(gains: ControlGains, dt: f64) -> Self {
        Self {
            gains,
            dt,
            prev_error: None,
        }
    }

    pub fn update(&mut self, nu_ref: &Vector6<f64>, state: &BodyState) -> Vector6<f64> {
        let e = nu_ref - state.nu;
        let e_dot = self
            .prev_error
            .map_or(Vector6::zeros(), |p| (e - p) / self.dt);
        self.prev_error = Some(e);
        pd_control(nu_ref, state, &e_dot, &self.gains)
    }

    pub fn reset(&mut self) {
        self.prev_error = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn kinematic_examples() {
        let p = kinematic_step(
            Pose4::default(),
            VelocityCommand4::new(1.0, 0.0, 0.0, 0.0),
            0.1,
        );
        assert!((p.x - 0.1).abs() < 1e-15 && p.y.abs() < 1e-15);
        let q = kinematic_step(
            Pose4::new(0.0, 0.0, 0.0, FRAC_PI_2),
            VelocityCommand4::new(1.0, 0.0, 0.0, 0.0),
            0.1,
        );
        assert!(q.x.abs() < 1e-15 && (q.y - 0.1).abs() < 1e-15);
        let r = Pose4::new(1.0, 2.0, 3.0, 0.4);
        assert_eq!(kinematic_step(r, VelocityCommand4::default(), 0.1), r);
    }

    #[test]
    fn neutral_rest_is_equilibrium() {
        let p = VehicleParams {
            r_b: [0.0; 3],
            ..VehicleParams::default()
        };
        let s = BodyState::at_rest(Pose4::new(1.0, 2.0, 0.5, 0.3));
        let n = dynamics_step(&s, &Vector6::zeros(), &p, 0.01).unwrap();
        assert_eq!(n.nu, Vector6::zeros());
        assert_eq!(n.eta, s.eta);
    }

    #[test]
    fn positive_buoyancy_accelerates_upward() {
        let p = VehicleParams {
            buoyancy: VehicleParams::default().weight + 5.0,
            ..VehicleParams::default()
        };
        let s = BodyState::at_rest(Pose4::default());
        let n = dynamics_step(&s, &Vector6::zeros(), &p, 0.01).unwrap();
        assert!(n.nu[2] > 0.0);
    }

    #[test]
    fn pd_examples() {
        let s = BodyState::at_rest(Pose4::default());
        let g = ControlGains {
            kp: [2.0; 6],
            kd: [0.0; 6],
        };
        assert_eq!(
            pd_control(&Vector6::zeros(), &s, &Vector6::zeros(), &g),
            Vector6::zeros()
        );
        let tau = pd_control(
            &Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            &s,
            &Vector6::zeros(),
            &g,
        );
        assert_eq!(tau, Vector6::new(2.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn pd_derivative_is_backward_difference() {
        let g = ControlGains {
            kp: [0.0; 6],
            kd: [1.0; 6],
        };
        let mut c = PdController::new(g, 0.1);
        let s = BodyState::at_rest(Pose4::default());
        let r0 = Vector6::zeros();
        let r1 = Vector6::new(0.5, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(c.update(&r0, &s), Vector6::zeros());
        let tau = c.update(&r1, &s);
        assert!((tau[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn nonfinite_torque_is_reported() {
        let s = BodyState::at_rest(Pose4::default());
        let tau = Vector6::new(f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            dynamics_step(&s, &tau, &VehicleParams::default(), 0.01),
            Err(DynamicsError::NonFinite { .. })
        ));
    }

    #[test]
    fn default_params_are_valid() {
        assert!(VehicleParams::default().validate());
    }

    #[test]
    fn impulse_changes_velocity_by_inverse_mass() {
        let p = VehicleParams::default();
        let s = BodyState::at_rest(Pose4::default());
        let j = Vector6::new(0.0, 0.0, 30.18, 0.0, 0.0, 0.0);
        let n = apply_impulse(&s, &j, &p);
        assert!((n.nu[2] - 30.18 / (11.5 + 18.68)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent(v in proptest::collection::vec(-2.0f64..2.0, 0..64)) {
            let n = v.len() / 4 * 4;
            let a = ActionSequence::from_flat(&v[..n]);
            let lim = [0.6, 0.4, 0.2, 0.15];
            let once = a.clamped(lim);
            prop_assert!(once.within(lim));
            prop_assert_eq!(once.clamped(lim), once);
        }

        #[test]
        fn planar_speed_preserved(yaw in -3.0f64..3.0, vx in -1.0f64..1.0, vy in -1.0f64..1.0) {
            let dt = 0.1;
            let p = kinematic_step(Pose4::new(0.0, 0.0, 0.0, yaw), VelocityCommand4::new(vx, vy, 0.0, 0.0), dt);
            prop_assert!((p.x.hypot(p.y) / dt - vx.hypot(vy)).abs() < 1e-12);
        }

        #[test]
        fn yaw_stays_wrapped(r in -0.15f64..0.15, steps in 1usize..500) {
            let mut p = Pose4::new(0.0, 0.0, 0.0, 3.0);
            for _ in 0..steps {
                p = kinematic_step(p, VelocityCommand4::new(0.0, 0.0, 0.0, r * 100.0), 0.1);
                prop_assert!(p.yaw > -std::f64::consts::PI && p.yaw <= std::f64::consts::PI);
            }
        }
    }
}
