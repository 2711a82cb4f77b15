//! Parameter layout and graph construction for the context encoder and the
//! conditional denoiser.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use seanav_autodiff::{Graph, ParamId, ParamSet, Tensor, Var};

use super::PolicyConfig;
use crate::features::{FEATURE_DIM, GOAL_DIM};

struct Init<'a> {
    set: &'a mut ParamSet,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let n = Normal::new(0.0, std).expect("valid std");
        let t = Tensor::from_fn(shape, |_| n.sample(&mut self.rng));
        self.set.add(name, t)
    }

    /// Weight `[fan_in, fan_out]` scaled by `1/√fan_in`.
    fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) -> ParamId {
        self.normal(name, &[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt())
    }

    fn fill(&mut self, name: String, shape: &[usize], v: f64) -> ParamId {
        self.set.add(name, Tensor::filled(shape, v))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    ln1: (ParamId, ParamId),
    q: (ParamId, ParamId),
    k: (ParamId, ParamId),
    v: (ParamId, ParamId),
    o: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub(crate) struct ResBlock {
    conv1: (ParamId, ParamId),
    gn1: (ParamId, ParamId),
    film_gamma: (ParamId, ParamId),
    film_beta: (ParamId, ParamId),
    conv2: (ParamId, ParamId),
    gn2: (ParamId, ParamId),
    skip: Option<(ParamId, ParamId)>,
    cout: usize,
}

/// Handles into the [`ParamSet`] for every trainable tensor.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub compress: (ParamId, ParamId),
    pub goal_gamma: (ParamId, ParamId),
    pub goal_beta: (ParamId, ParamId),
    proj: (ParamId, ParamId),
    pub cls: ParamId,
    pub pos: ParamId,
    layers: Vec<EncoderLayer>,
    ln_f: (ParamId, ParamId),
    cond: (ParamId, ParamId),
    down_blocks: Vec<ResBlock>,
    downsample: Vec<(ParamId, ParamId)>,
    mid: ResBlock,
    up_blocks: Vec<ResBlock>,
    out: (ParamId, ParamId),
}

fn groups_for(c: usize) -> usize {
    [8, 4, 2]
        .into_iter()
        .find(|g| c.is_multiple_of(*g) && c >= *g)
        .unwrap_or(1)
}

impl Layout {
    /// Registers every tensor in a fixed order and initializes it from `seed`.
    pub fn build(cfg: &PolicyConfig, set: &mut ParamSet, seed: u64) -> Self {
        let mut it = Init {
            set,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let d = cfg.width;
        let ch = cfg.raw_channels;
        let compress = (
            it.weight("compress.w".into(), ch, 1),
            it.fill("compress.b".into(), &[1], 0.0),
        );
        let goal_gamma = (
            it.normal("film.gamma.w".into(), &[GOAL_DIM, FEATURE_DIM], 0.1),
            it.fill("film.gamma.b".into(), &[FEATURE_DIM], 1.0),
        );
        let goal_beta = (
            it.normal("film.beta.w".into(), &[GOAL_DIM, FEATURE_DIM], 0.1),
            it.fill("film.beta.b".into(), &[FEATURE_DIM], 0.0),
        );
        let proj = (
            it.weight("proj.w".into(), FEATURE_DIM, d),
            it.fill("proj.b".into(), &[d], 0.0),
        );
        let cls = it.normal("cls".into(), &[d], 0.02);
        let pos = it.normal("pos".into(), &[cfg.p + 2, d], 0.02);
        let mut layers = Vec::new();
        for l in 0..cfg.layers {
            let lin = |it: &mut Init, name: &str, a: usize, b: usize| {
                (
                    it.weight(format!("enc{l}.{name}.w"), a, b),
                    it.fill(format!("enc{l}.{name}.b"), &[b], 0.0),
                )
            };
            let ln1 = (
                it.fill(format!("enc{l}.ln1.g"), &[d], 1.0),
                it.fill(format!("enc{l}.ln1.b"), &[d], 0.0),
            );
            let q = lin(&mut it, "q", d, d);
            let k = lin(&mut it, "k", d, d);
            let v = lin(&mut it, "v", d, d);
            let o = lin(&mut it, "o", d, d);
            let ln2 = (
                it.fill(format!("enc{l}.ln2.g"), &[d], 1.0),
                it.fill(format!("enc{l}.ln2.b"), &[d], 0.0),
            );
            let ff1 = lin(&mut it, "ff1", d, cfg.ff);
            let ff2 = lin(&mut it, "ff2", cfg.ff, d);
            layers.push(EncoderLayer {
                ln1,
                q,
                k,
                v,
                o,
                ln2,
                ff1,
                ff2,
            });
        }
        let ln_f = (
            it.fill("ln_f.g".into(), &[d], 1.0),
            it.fill("ln_f.b".into(), &[d], 0.0),
        );
        let cond_dim = cfg.cond_dim();
        let cond = (
            it.weight("cond.w".into(), d + cfg.step_embed, cond_dim),
            it.fill("cond.b".into(), &[cond_dim], 0.0),
        );
        let kz = cfg.kernel;
        let block = |it: &mut Init, name: String, cin: usize, cout: usize| ResBlock {
            conv1: (
                it.weight(format!("{name}.conv1.w"), kz * cin, cout),
                it.fill(format!("{name}.conv1.b"), &[cout], 0.0),
            ),
            gn1: (
                it.fill(format!("{name}.gn1.g"), &[cout], 1.0),
                it.fill(format!("{name}.gn1.b"), &[cout], 0.0),
            ),
            film_gamma: (
                it.normal(
                    format!("{name}.film.gamma.w"),
                    &[cond_dim, cout],
                    0.1 / (cond_dim as f64).sqrt(),
                ),
                it.fill(format!("{name}.film.gamma.b"), &[cout], 1.0),
            ),
            film_beta: (
                it.weight(format!("{name}.film.beta.w"), cond_dim, cout),
                it.fill(format!("{name}.film.beta.b"), &[cout], 0.0),
            ),
            conv2: (
                it.weight(format!("{name}.conv2.w"), kz * cout, cout),
                it.fill(format!("{name}.conv2.b"), &[cout], 0.0),
            ),
            gn2: (
                it.fill(format!("{name}.gn2.g"), &[cout], 1.0),
                it.fill(format!("{name}.gn2.b"), &[cout], 0.0),
            ),
            skip: (cin != cout).then(|| {
                (
                    it.weight(format!("{name}.skip.w"), cin, cout),
                    it.fill(format!("{name}.skip.b"), &[cout], 0.0),
                )
            }),
            cout,
        };
        let w = &cfg.unet;
        let mut down_blocks = Vec::new();
        let mut downsample = Vec::new();
        let mut cin = super::ACTION_DIM;
        for (i, &c) in w[..w.len() - 1].iter().enumerate() {
            down_blocks.push(block(&mut it, format!("down{i}"), cin, c));
            downsample.push((
                it.weight(format!("down{i}.pool.w"), 3 * c, c),
                it.fill(format!("down{i}.pool.b"), &[c], 0.0),
            ));
            cin = c;
        }
        let top = *w.last().expect("at least one level");
        let mid = block(&mut it, "mid".into(), cin, top);
        let mut up_blocks = Vec::new();
        let mut below = top;
        for i in (0..w.len() - 1).rev() {
            up_blocks.push(block(&mut it, format!("up{i}"), below + w[i], w[i]));
            below = w[i];
        }
        let out = (
            it.normal(
                "out.w".into(),
                &[below, super::ACTION_DIM],
                0.1 / (below as f64).sqrt(),
            ),
            it.fill("out.b".into(), &[super::ACTION_DIM], 0.0),
        );
        Self {
            compress,
            goal_gamma,
            goal_beta,
            proj,
            cls,
            pos,
            layers,
            ln_f,
            cond,
            down_blocks,
            downsample,
            mid,
            up_blocks,
            out,
        }
    }

    /// Compression, reference normalization and goal modulation:
    /// `raw: [B, T, 256, C]`, `goals: [B, T, 3]` → `[B, T, 256]`, token 0 being
    /// the reference frame.
    pub fn modulate(&self, g: &mut Graph, raw: Var, goals: Var, stats: (f64, f64)) -> Var {
        let s = g.shape(raw).to_vec();
        let (b, t) = (s[0], s[1]);
        let (cw, cb) = (g.param(self.compress.0), g.param(self.compress.1));
        let f = g.linear(raw, cw, Some(cb));
        let f = g.reshape(f, &[b, t, FEATURE_DIM]);
        let f = g.ref_normalize(f);
        let f = g.affine(f, stats.1, stats.0);
        let gamma = lin(g, goals, self.goal_gamma);
        let beta = lin(g, goals, self.goal_beta);
        let f = g.mul(f, gamma);
        g.add(f, beta)
    }

    /// Modulated tokens `[B, T, 256]` → CLS representation `[B, D]`.
    pub fn encode(&self, g: &mut Graph, tokens: Var, heads: usize) -> Var {
        let x = lin(g, tokens, self.proj);
        let cls = g.param(self.cls);
        let x = g.prepend(x, cls);
        let pos = g.param(self.pos);
        let mut x = g.add(x, pos);
        for l in &self.layers {
            let h = ln(g, x, l.ln1);
            let q = lin(g, h, l.q);
            let k = lin(g, h, l.k);
            let v = lin(g, h, l.v);
            let a = g.attention(q, k, v, heads);
            let a = lin(g, a, l.o);
            x = g.add(x, a);
            let h = ln(g, x, l.ln2);
            let h = lin(g, h, l.ff1);
            let h = g.gelu(h);
            let h = lin(g, h, l.ff2);
            x = g.add(x, h);
        }
        let x = ln(g, x, self.ln_f);
        g.select(x, 0)
    }

    /// Noise estimate `[B, Q, 4]` for `noisy: [B, Q, 4]`, `context: [B, D]`,
    /// `step: [B, E]` (sinusoidal step embedding).
    pub fn denoise(
        &self,
        g: &mut Graph,
        context: Var,
        noisy: Var,
        step: Var,
        kernel: usize,
    ) -> Var {
        let c = g.concat(context, step);
        let c = lin(g, c, self.cond);
        let cond = g.silu(c);
        let mut x = noisy;
        let mut skips = Vec::new();
        for (blk, pool) in self.down_blocks.iter().zip(&self.downsample) {
            x = res_block(g, blk, x, cond, kernel);
            skips.push(x);
            let (w, b) = (g.param(pool.0), g.param(pool.1));
            x = g.conv1d(x, w, Some(b), 3, 2, 1);
        }
        x = res_block(g, &self.mid, x, cond, kernel);
        for blk in &self.up_blocks {
            x = g.upsample2(x);
            let s = skips.pop().expect("matching skip");
            x = g.concat(x, s);
            x = res_block(g, blk, x, cond, kernel);
        }
        lin(g, x, self.out)
    }
}

fn lin(g: &mut Graph, x: Var, p: (ParamId, ParamId)) -> Var {
    let (w, b) = (g.param(p.0), g.param(p.1));
    g.linear(x, w, Some(b))
}

fn ln(g: &mut Graph, x: Var, p: (ParamId, ParamId)) -> Var {
    let (w, b) = (g.param(p.0), g.param(p.1));
    g.layer_norm(x, w, b)
}

fn res_block(g: &mut Graph, blk: &ResBlock, x: Var, cond: Var, kernel: usize) -> Var {
    let pad = kernel / 2;
    let groups = groups_for(blk.cout);
    let (w, b) = (g.param(blk.conv1.0), g.param(blk.conv1.1));
    let h = g.conv1d(x, w, Some(b), kernel, 1, pad);
    let (gg, gb) = (g.param(blk.gn1.0), g.param(blk.gn1.1));
    let h = g.group_norm(h, gg, gb, groups);
    let gamma = lin(g, cond, blk.film_gamma);
    let beta = lin(g, cond, blk.film_beta);
    let h = g.film(h, gamma, beta);
    let h = g.silu(h);
    let (w, b) = (g.param(blk.conv2.0), g.param(blk.conv2.1));
    let h = g.conv1d(h, w, Some(b), kernel, 1, pad);
    let (gg, gb) = (g.param(blk.gn2.0), g.param(blk.gn2.1));
    let h = g.group_norm(h, gg, gb, groups);
    let h = g.silu(h);
    let skip = match blk.skip {
        Some(p) => lin(g, x, p),
        None => x,
    };
    g.add(h, skip)
}

/// Sinusoidal embedding of the integer step `k`.
pub fn step_embedding(k: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(1000f64).ln() * i as f64 / half.max(1) as f64).exp();
        let a = k as f64 * freq;
        out[i] = a.sin();
        out[half + i] = a.cos();
    }
    out
}
