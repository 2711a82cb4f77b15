use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seanav_autodiff::max_grad_error;
use seanav_core::dynamics::{ActionSequence, VelocityCommand4};
use seanav_core::features::{encode_goal, NormStats, RawFeatureMap, CELLS};
use seanav_core::planner::V_MAX;
use seanav_core::policy::{
    DiffusionSchedule, PolicyConfig, PolicyInput, PolicyParams, TrainingSample,
};

fn tiny() -> PolicyConfig {
    PolicyConfig {
        p: 3,
        q: 8,
        k: 4,
        width: 8,
        layers: 2,
        heads: 2,
        ff: 8,
        unet: vec![4, 8],
        kernel: 3,
        step_embed: 4,
        raw_channels: 3,
    }
}

fn sample(cfg: &PolicyConfig, rng: &mut ChaCha8Rng) -> TrainingSample {
    let frames = (0..=cfg.p)
        .map(|_| RawFeatureMap {
            channels: cfg.raw_channels,
            data: (0..CELLS * cfg.raw_channels)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        })
        .collect();
    let goals = (0..=cfg.p)
        .map(|i| encode_goal(rng.gen_range(-1.0..1.0), i as f64 / 4.0).unwrap())
        .collect();
    let actions = ActionSequence::new(
        (0..cfg.q)
            .map(|_| {
                VelocityCommand4::from_array(std::array::from_fn(|a| {
                    rng.gen_range(-V_MAX[a]..V_MAX[a])
                }))
            })
            .collect(),
    );
    TrainingSample {
        input: PolicyInput { frames, goals },
        actions,
    }
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let data: Vec<TrainingSample> = (0..2).map(|_| sample(&cfg, &mut rng)).collect();
    let refs: Vec<&TrainingSample> = data.iter().collect();
    let ks = vec![1, 3];
    let eps: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..cfg.q * 4).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect();
    let params = PolicyParams::init(cfg, 7).unwrap();
    let schedule = DiffusionSchedule::cosine(4);
    let stats = NormStats {
        mu: 0.1,
        sigma: 1.3,
    };
    let err = max_grad_error(&params.set, 1e-4, |g| {
        params.batch_loss(g, &refs, &ks, &eps, &schedule, &stats, 0.99)
    });
    println!(
        "max relative gradient error {err:.3e} over {} scalars",
        params.num_scalars()
    );
    assert!(err < 1e-3);
}
