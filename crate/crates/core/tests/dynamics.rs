use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seanav_core::dynamics::{
    coriolis, dynamics_step, kinetic_energy, BodyState, ControlGains, PdController, VehicleParams,
    VelocityCommand4,
};
use seanav_core::geometry::Pose4;

fn random_nu(rng: &mut ChaCha8Rng) -> Vector6<f64> {
    Vector6::from_fn(|_, _| rng.gen_range(-2.0..2.0))
}

#[test]
fn coriolis_does_no_work() {
    let m = VehicleParams::default().mass_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let nu = random_nu(&mut rng);
        let c = coriolis(&m, &nu);
        assert!(nu.dot(&(c * nu)).abs() < 1e-12);
        assert!((c + c.transpose()).abs().max() < 1e-12);
    }
}

fn frictionless() -> VehicleParams {
    VehicleParams {
        linear_damping: [0.0; 6],
        quadratic_damping: [0.0; 6],
        weight: 0.0,
        buoyancy: 0.0,
        r_g: [0.01, -0.02, 0.03],
        ..VehicleParams::default()
    }
}

#[test]
fn undamped_energy_is_conserved() {
    let p = frictionless();
    let mut s = BodyState::at_rest(Pose4::default());
    s.nu = Vector6::new(0.4, -0.2, 0.1, 0.5, -0.3, 0.6);
    let e0 = kinetic_energy(&p, &s.nu);
    for _ in 0..1000 {
        s = dynamics_step(&s, &Vector6::zeros(), &p, 0.01).unwrap();
    }
    let e1 = kinetic_energy(&p, &s.nu);
    assert!(((e1 - e0) / e0).abs() < 1e-3, "{e0} -> {e1}");
}

#[test]
fn damped_surge_matches_exponential() {
    let d = 13.7;
    let p = VehicleParams {
        linear_damping: [d, 0.0, 0.0, 0.0, 0.0, 0.0],
        quadratic_damping: [0.0; 6],
        r_b: [0.0; 3],
        ..VehicleParams::default()
    };
    let m = p.mass_matrix()[(0, 0)];
    let u0 = 0.5;
    let mut s = BodyState::at_rest(Pose4::default());
    s.nu[0] = u0;
    for _ in 0..200 {
        s = dynamics_step(&s, &Vector6::zeros(), &p, 0.01).unwrap();
    }
    let want = u0 * (-(d / m) * 2.0).exp();
    assert!(
        ((s.nu[0] - want) / want).abs() < 0.01,
        "{} vs {want}",
        s.nu[0]
    );
}

/// Closed-loop surge step response; frozen from the first run.
#[test]
fn surge_step_settles() {
    let p = VehicleParams::default();
    let mut ctl = PdController::new(ControlGains::default(), 0.01);
    let reference = VelocityCommand4::new(0.3, 0.0, 0.0, 0.0).to_nu();
    let mut s = BodyState::at_rest(Pose4::default());
    let mut settled_at = None;
    for k in 0..1000 {
        let tau = ctl.update(&reference, &s);
        s = dynamics_step(&s, &tau, &p, 0.01).unwrap();
        let inside = (s.nu[0] - 0.3).abs() <= 0.05 * 0.3;
        match (inside, settled_at) {
            (true, None) => settled_at = Some(k + 1),
            (false, Some(_)) => settled_at = None,
            _ => {}
        }
    }
    let steps = settled_at.expect("settles");
    println!("surge settling time {:.2} s", steps as f64 * 0.01);
    assert!((steps as f64 * 0.01 - 0.05).abs() < 0.015);
}
