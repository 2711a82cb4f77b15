//! Diffusion navigation policy: context encoder, conditional denoiser,
//! discounted noise-prediction training and DDPM sampling.

mod checkpoint;
mod network;
mod schedule;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use network::step_embedding;
pub use schedule::DiffusionSchedule;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use seanav_autodiff::{AdamW, Graph, ParamGrads, ParamSet, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ActionSequence, VelocityCommand4};
use crate::features::{
    FilmParams, GoalEncoding, NormStats, RawFeatureMap, CELLS, CHANNELS, FEATURE_DIM, GOAL_DIM,
};
use crate::planner::V_MAX;
use network::Layout;

pub const ACTION_DIM: usize = 4;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite training loss at step {step} (loss {loss}, gradient norm {grad_norm})")]
    NonFinite {
        step: u64,
        loss: f64,
        grad_norm: f64,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Network architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// History length `P`; the encoder sees `P + 2` tokens.
    pub p: usize,
    /// Action horizon `Q`.
    pub q: usize,
    /// Denoising steps `K`.
    pub k: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    /// Channel widths of the U-net levels, finest first.
    pub unet: Vec<usize>,
    pub kernel: usize,
    pub step_embed: usize,
    pub raw_channels: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            p: 3,
            q: 32,
            k: 10,
            width: 256,
            layers: 4,
            heads: 4,
            ff: 1024,
            unet: vec![64, 128, 256],
            kernel: 5,
            step_embed: 64,
            raw_channels: CHANNELS,
        }
    }
}

impl PolicyConfig {
    /// Reduced widths that train in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            width: 64,
            layers: 2,
            ff: 128,
            unet: vec![16, 32, 64],
            step_embed: 32,
            ..Self::default()
        }
    }

    pub(crate) fn cond_dim(&self) -> usize {
        self.width
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let levels = self.unet.len();
        let err = |m: &str| Err(PolicyError::Config(m.to_string()));
        if self.p == 0 || self.k == 0 || self.layers == 0 {
            return err("p, k and layers must be positive");
        }
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return err("width must be a positive multiple of heads");
        }
        if levels == 0 || !self.q.is_multiple_of(1 << (levels - 1)) || self.q == 0 {
            return err("q must be divisible by 2^(levels-1)");
        }
        if self.kernel.is_multiple_of(2)
            || !self.step_embed.is_multiple_of(2)
            || self.raw_channels == 0
        {
            return err("kernel must be odd and step_embed even");
        }
        Ok(())
    }
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Per-step loss discount `κ`.
    pub kappa: f64,
    pub weight_decay: f64,
    /// Global gradient-norm bound; zero disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch: 64,
            epochs: 100,
            kappa: 0.99,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(PolicyError::Config(format!(
                "kappa {} outside (0, 1]",
                self.kappa
            )));
        }
        if !(self.lr > 0.0) || self.batch == 0 {
            return Err(PolicyError::Config("lr and batch must be positive".into()));
        }
        Ok(())
    }
}

/// Reference frame followed by the `P` most recent frames, oldest first, with
/// one goal encoding per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyInput {
    pub frames: Vec<RawFeatureMap>,
    pub goals: Vec<GoalEncoding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub input: PolicyInput,
    /// Supervision in physical units.
    pub actions: ActionSequence,
}

/// Trainable weights together with their architecture.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub set: ParamSet,
    layout: Layout,
}

impl PartialEq for PolicyParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.set.len() == other.set.len()
            && self
                .set
                .iter()
                .zip(other.set.iter())
                .all(|((_, na, ta), (_, nb, tb))| {
                    na == nb
                        && ta.shape() == tb.shape()
                        && ta
                            .data()
                            .iter()
                            .zip(tb.data())
                            .all(|(a, b)| a.to_bits() == b.to_bits())
                })
    }
}

/// Divides by the command limits so every axis spans `[-1, 1]`.
pub fn normalize_actions(a: &ActionSequence) -> Vec<f64> {
    a.actions
        .iter()
        .flat_map(|c| {
            let v = c.to_array();
            [
                v[0] / V_MAX[0],
                v[1] / V_MAX[1],
                v[2] / V_MAX[2],
                v[3] / V_MAX[3],
            ]
        })
        .collect()
}

/// Inverse of [`normalize_actions`] followed by the final clamp.
pub fn denormalize_actions(x: &[f64]) -> ActionSequence {
    ActionSequence::new(
        x.chunks_exact(ACTION_DIM)
            .map(|r| {
                VelocityCommand4::from_array([
                    r[0] * V_MAX[0],
                    r[1] * V_MAX[1],
                    r[2] * V_MAX[2],
                    r[3] * V_MAX[3],
                ])
            })
            .collect(),
    )
    .clamped(V_MAX)
}

/// `κ^j` for `j = 0..q`.
pub fn discount_weights(kappa: f64, q: usize) -> Vec<f64> {
    (0..q).map(|j| kappa.powi(j as i32)).collect()
}

impl PolicyParams {
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self, PolicyError> {
        config.validate()?;
        let mut set = ParamSet::new();
        let layout = Layout::build(&config, &mut set, seed);
        Ok(Self {
            config,
            set,
            layout,
        })
    }

    pub fn num_scalars(&self) -> usize {
        self.set.num_scalars()
    }

    /// Compressor weights and bias.
    pub fn compressor(&self) -> (Vec<f64>, f64) {
        let w = self.set.get(self.layout.compress.0).data().to_vec();
        (w, self.set.get(self.layout.compress.1).data()[0])
    }

    pub fn film_params(&self) -> FilmParams {
        let get = |id| self.set.get(id).data().to_vec();
        FilmParams {
            w_gamma: get(self.layout.goal_gamma.0),
            b_gamma: get(self.layout.goal_gamma.1),
            w_beta: get(self.layout.goal_beta.0),
            b_beta: get(self.layout.goal_beta.1),
        }
    }

    /// Zeroes the learned positional embeddings.
    pub fn clear_positional(&mut self) {
        self.set.get_mut(self.layout.pos).data_mut().fill(0.0);
    }

    fn check_input(&self, input: &PolicyInput) -> Result<(), PolicyError> {
        let t = self.config.p + 1;
        if input.frames.len() != t || input.goals.len() != t {
            return Err(PolicyError::Input(format!(
                "expected {t} frames and goals, got {} and {}",
                input.frames.len(),
                input.goals.len()
            )));
        }
        for f in &input.frames {
            if f.channels != self.config.raw_channels || f.data.len() != CELLS * f.channels {
                return Err(PolicyError::Input("feature map has the wrong shape".into()));
            }
        }
        Ok(())
    }

    fn batch_tensors(&self, inputs: &[&PolicyInput]) -> (Tensor, Tensor) {
        let t = self.config.p + 1;
        let c = self.config.raw_channels;
        let b = inputs.len();
        let mut raw = Vec::with_capacity(b * t * CELLS * c);
        let mut goals = Vec::with_capacity(b * t * GOAL_DIM);
        for inp in inputs {
            for f in &inp.frames {
                raw.extend_from_slice(&f.data);
            }
            for g in &inp.goals {
                goals.extend_from_slice(&g.to_array());
            }
        }
        (
            Tensor::new(&[b, t, CELLS, c], raw),
            Tensor::new(&[b, t, GOAL_DIM], goals),
        )
    }

    /// Goal-modulated tokens `(P+1) × 256` for one observation.
    pub fn modulated_features(
        &self,
        input: &PolicyInput,
        stats: &NormStats,
    ) -> Result<Vec<Vec<f64>>, PolicyError> {
        self.check_input(input)?;
        let (raw, goals) = self.batch_tensors(&[input]);
        let mut g = Graph::new(&self.set);
        let (r, gv) = (g.input(raw), g.input(goals));
        let m = self.layout.modulate(&mut g, r, gv, (stats.mu, stats.sigma));
        Ok(g.value(m)
            .data()
            .chunks(FEATURE_DIM)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Transformer context from already modulated tokens.
    pub fn build_context(&self, modulated: &[Vec<f64>]) -> Result<Vec<f64>, PolicyError> {
        let t = self.config.p + 1;
        if modulated.len() != t || modulated.iter().any(|m| m.len() != FEATURE_DIM) {
            return Err(PolicyError::Input(format!(
                "expected {t} tokens of length {FEATURE_DIM}, got {}",
                modulated.len()
            )));
        }
        let mut g = Graph::new(&self.set);
        let x = g.input(Tensor::new(&[1, t, FEATURE_DIM], modulated.concat()));
        let c = self.layout.encode(&mut g, x, self.config.heads);
        Ok(g.value(c).data().to_vec())
    }

    /// Full perception path: compression, normalization, fusion and encoding.
    pub fn context(&self, input: &PolicyInput, stats: &NormStats) -> Result<Vec<f64>, PolicyError> {
        self.check_input(input)?;
        let (raw, goals) = self.batch_tensors(&[input]);
        let mut g = Graph::new(&self.set);
        let (r, gv) = (g.input(raw), g.input(goals));
        let m = self.layout.modulate(&mut g, r, gv, (stats.mu, stats.sigma));
        let c = self.layout.encode(&mut g, m, self.config.heads);
        Ok(g.value(c).data().to_vec())
    }

    /// `ε_θ(context, noisy, k)` with `noisy` in normalized action units, `Q×4`
    /// row-major.
    pub fn predict_noise(
        &self,
        context: &[f64],
        noisy: &[f64],
        k: usize,
    ) -> Result<Vec<f64>, PolicyError> {
        let q = self.config.q;
        if !(1..=self.config.k).contains(&k) {
            return Err(PolicyError::Input(format!(
                "step {k} outside 1..={}",
                self.config.k
            )));
        }
        if context.len() != self.config.width || noisy.len() != q * ACTION_DIM {
            return Err(PolicyError::Input(
                "context or action shape mismatch".into(),
            ));
        }
        let mut g = Graph::new(&self.set);
        let c = g.input(Tensor::new(&[1, self.config.width], context.to_vec()));
        let x = g.input(Tensor::new(&[1, q, ACTION_DIM], noisy.to_vec()));
        let e = step_embedding(k, self.config.step_embed);
        let s = g.input(Tensor::new(&[1, self.config.step_embed], e));
        let out = self.layout.denoise(&mut g, c, x, s, self.config.kernel);
        Ok(g.value(out).data().to_vec())
    }

    /// Discounted noise loss of a batch; `ks[b]` and `eps[b]` are the
    /// diffusion step and noise drawn for sample `b`.
    pub fn batch_loss<'g>(
        &self,
        g: &mut Graph<'g>,
        samples: &[&TrainingSample],
        ks: &[usize],
        eps: &[Vec<f64>],
        schedule: &DiffusionSchedule,
        stats: &NormStats,
        kappa: f64,
    ) -> seanav_autodiff::Var {
        let cfg = &self.config;
        let b = samples.len();
        let inputs: Vec<&PolicyInput> = samples.iter().map(|s| &s.input).collect();
        let (raw, goals) = self.batch_tensors(&inputs);
        let mut noisy = Vec::with_capacity(b * cfg.q * ACTION_DIM);
        let mut steps = Vec::with_capacity(b * cfg.step_embed);
        for (i, s) in samples.iter().enumerate() {
            noisy.extend(schedule.corrupt(&normalize_actions(&s.actions), &eps[i], ks[i]));
            steps.extend(step_embedding(ks[i], cfg.step_embed));
        }
        let r = g.input(raw);
        let gv = g.input(goals);
        let m = self.layout.modulate(g, r, gv, (stats.mu, stats.sigma));
        let c = self.layout.encode(g, m, cfg.heads);
        let x = g.input(Tensor::new(&[b, cfg.q, ACTION_DIM], noisy));
        let st = g.input(Tensor::new(&[b, cfg.step_embed], steps));
        let pred = self.layout.denoise(g, c, x, st, cfg.kernel);
        let target = Tensor::new(&[b, cfg.q, ACTION_DIM], eps.concat());
        g.weighted_sq_err(pred, &target, &discount_weights(kappa, cfg.q))
    }
}

/// Runs the reverse chain from a unit Gaussian draw with the given noise
/// estimator; returns the final iterate without clamping.
pub fn ddpm_chain(
    schedule: &DiffusionSchedule,
    len: usize,
    seed: u64,
    mut eps_theta: impl FnMut(&[f64], usize) -> Vec<f64>,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    for k in (1..=schedule.k).rev() {
        let e = eps_theta(&x, k);
        let (a, gm, s) = (schedule.alpha[k], schedule.gamma[k], schedule.sigma[k]);
        for (xi, ei) in x.iter_mut().zip(&e) {
            *xi = a * (*xi - gm * ei);
        }
        if s > 0.0 {
            for xi in x.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *xi += s * z;
            }
        }
    }
    x
}

/// Frozen parameters plus normalization statistics, ready for inference.
#[derive(Debug, Clone)]
pub struct Policy {
    pub params: PolicyParams,
    pub stats: NormStats,
    pub schedule: DiffusionSchedule,
}

impl Policy {
    pub fn new(params: PolicyParams, stats: NormStats) -> Self {
        let schedule = DiffusionSchedule::cosine(params.config.k);
        Self {
            params,
            stats,
            schedule,
        }
    }

    pub fn context(&self, input: &PolicyInput) -> Result<Vec<f64>, PolicyError> {
        self.params.context(input, &self.stats)
    }

    /// Sampled and clamped action sequence for a precomputed context.
    pub fn sample_from_context(
        &self,
        context: &[f64],
        seed: u64,
    ) -> Result<ActionSequence, PolicyError> {
        let len = self.params.config.q * ACTION_DIM;
        let mut err = None;
        let x = ddpm_chain(&self.schedule, len, seed, |x, k| {
            match self.params.predict_noise(context, x, k) {
                Ok(e) => e,
                Err(e) => {
                    err.get_or_insert(e);
                    vec![0.0; len]
                }
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(denormalize_actions(&x)),
        }
    }

    pub fn sample(&self, input: &PolicyInput, seed: u64) -> Result<ActionSequence, PolicyError> {
        let c = self.context(input)?;
        self.sample_from_context(&c, seed)
    }
}

/// Stateful optimizer loop over a parameter set.
pub struct Trainer {
    pub params: PolicyParams,
    pub stats: NormStats,
    pub cfg: TrainConfig,
    pub schedule: DiffusionSchedule,
    opt: AdamW,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(
        params: PolicyParams,
        stats: NormStats,
        cfg: TrainConfig,
    ) -> Result<Self, PolicyError> {
        cfg.validate()?;
        let mut opt = AdamW::new(&params.set, cfg.lr);
        opt.weight_decay = cfg.weight_decay;
        opt.clip_norm = (cfg.clip_norm > 0.0).then_some(cfg.clip_norm);
        let schedule = DiffusionSchedule::cosine(params.config.k);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            params,
            stats,
            cfg,
            schedule,
            opt,
            rng,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.opt.steps_taken()
    }

    /// Overrides the learning rate for subsequent steps.
    pub fn set_lr(&mut self, lr: f64) {
        self.opt.lr = lr;
    }

    fn draw(&mut self, n: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
        let len = self.params.config.q * ACTION_DIM;
        let kmax = self.params.config.k;
        let ks = (0..n).map(|_| self.rng.gen_range(1..=kmax)).collect();
        let eps = (0..n)
            .map(|_| (0..len).map(|_| self.rng.sample(StandardNormal)).collect())
            .collect();
        (ks, eps)
    }

    /// One optimizer update on `batch`; returns the batch loss.
    pub fn step(&mut self, batch: &[&TrainingSample]) -> Result<f64, PolicyError> {
        if batch.is_empty() {
            return Err(PolicyError::EmptyDataset);
        }
        let (ks, eps) = self.draw(batch.len());
        let (loss, grads): (f64, ParamGrads) = {
            let mut g = Graph::new(&self.params.set);
            let l = self.params.batch_loss(
                &mut g,
                batch,
                &ks,
                &eps,
                &self.schedule,
                &self.stats,
                self.cfg.kappa,
            );
            (g.value(l).data()[0], g.backward(l))
        };
        if !loss.is_finite() || !grads.all_finite() {
            return Err(PolicyError::NonFinite {
                step: self.opt.steps_taken(),
                loss,
                grad_norm: grads.global_norm(),
            });
        }
        self.opt.step(&mut self.params.set, &grads);
        Ok(loss)
    }

    /// One shuffled pass over `data`; returns the mean batch loss.
    pub fn epoch(&mut self, data: &[TrainingSample]) -> Result<f64, PolicyError> {
        if data.is_empty() {
            return Err(PolicyError::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut n = 0;
        for chunk in order.chunks(self.cfg.batch) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &data[i]).collect();
            total += self.step(&batch)?;
            n += 1;
        }
        Ok(total / n as f64)
    }

    /// Mean discounted loss over fixed `(k, ε)` draws: every sample is scored
    /// at every step `k` with noise from `seed`.
    pub fn evaluate(&self, data: &[TrainingSample], seed: u64) -> f64 {
        evaluate_loss(&self.params, &self.stats, data, self.cfg.kappa, seed)
    }

    pub fn into_policy(self) -> Policy {
        Policy::new(self.params, self.stats)
    }
}

/// Mean discounted noise loss over every sample and every step `k`.
pub fn evaluate_loss(
    params: &PolicyParams,
    stats: &NormStats,
    data: &[TrainingSample],
    kappa: f64,
    seed: u64,
) -> f64 {
    let schedule = DiffusionSchedule::cosine(params.config.k);
    let len = params.config.q * ACTION_DIM;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut n = 0;
    for k in 1..=params.config.k {
        let refs: Vec<&TrainingSample> = data.iter().collect();
        let ks = vec![k; refs.len()];
        let eps: Vec<Vec<f64>> = (0..refs.len())
            .map(|_| (0..len).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut g = Graph::new(&params.set);
        let l = params.batch_loss(&mut g, &refs, &ks, &eps, &schedule, stats, kappa);
        total += g.value(l).data()[0];
        n += 1;
    }
    total / n as f64
}

/// Single pass of training over `data` with a fresh optimizer state.
pub fn train_epoch(
    params: PolicyParams,
    stats: NormStats,
    data: &[TrainingSample],
    cfg: &TrainConfig,
) -> Result<(f64, PolicyParams), PolicyError> {
    let mut t = Trainer::new(params, stats, cfg.clone())?;
    let loss = t.epoch(data)?;
    Ok((loss, t.params))
}
