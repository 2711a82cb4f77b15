//! Depth-feature pipeline: extraction, 1×1 compression, reference-frame
//! normalization, goal encoding and FiLM fusion.

mod extract;

pub use extract::{
    distort_depth, extract_degraded, extract_oracle, DegradedExtractor, ExtractorKind,
    FeatureExtractor, OracleExtractor, FAR, MIN_DEPTH, NEAR,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side of the pooled feature grid.
pub const GRID: usize = 16;
pub const CELLS: usize = GRID * GRID;
pub const CHANNELS: usize = 8;
/// Length of a compressed feature.
pub const FEATURE_DIM: usize = CELLS;
pub const GOAL_DIM: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("feature statistics are degenerate (sigma = {0})")]
    ZeroVariance(f64),
    #[error("no features to fit statistics on")]
    Empty,
    #[error("progress ratio {0} outside [0, 1]")]
    Progress(f64),
}

/// `16×16` cells with `channels` values each, stored cell-major
/// (`data[cell·channels + c]`, cells in row-major grid order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFeatureMap {
    pub channels: usize,
    pub data: Vec<f64>,
}

impl RawFeatureMap {
    pub fn get(&self, cell: usize, channel: usize) -> f64 {
        self.data[cell * self.channels + channel]
    }

    pub fn at(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.get(row * GRID + col, channel)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedFeature(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: f64,
    pub sigma: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mu: 0.0,
        sigma: 1.0,
    };
}

/// Per-cell `w·x + b`, flattened in grid order.
pub fn compress(
    raw: &RawFeatureMap,
    weights: &[f64],
    bias: f64,
) -> Result<CompressedFeature, FeatureError> {
    if weights.len() != raw.channels {
        return Err(FeatureError::Dimension {
            expected: raw.channels,
            got: weights.len(),
        });
    }
    if raw.data.len() != CELLS * raw.channels {
        return Err(FeatureError::Dimension {
            expected: CELLS * raw.channels,
            got: raw.data.len(),
        });
    }
    Ok(CompressedFeature(
        raw.data
            .chunks_exact(raw.channels)
            .map(|cell| cell.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() + bias)
            .collect(),
    ))
}

fn moments<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    let mu = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
    (mu, var.sqrt(), n)
}

/// Scalar mean and population standard deviation over every element.
pub fn fit_reference_stats(features: &[CompressedFeature]) -> Result<NormStats, FeatureError> {
    if features.is_empty() || features.iter().all(|f| f.0.is_empty()) {
        return Err(FeatureError::Empty);
    }
    let (mu, sigma, _) = moments(features.iter().flat_map(|f| f.0.iter()));
    if sigma.is_finite() && sigma > 1e-12 {
        Ok(NormStats { mu, sigma })
    } else {
        Err(FeatureError::ZeroVariance(sigma))
    }
}

/// Statistics of a single frame.
pub fn frame_stats(f: &CompressedFeature) -> Result<NormStats, FeatureError> {
    fit_reference_stats(std::slice::from_ref(f))
}

/// `(f − μ₀)/σ₀ · σ_train + μ_train`.
pub fn normalize(
    f: &CompressedFeature,
    stats0: &NormStats,
    train: &NormStats,
) -> CompressedFeature {
    let scale = train.sigma / stats0.sigma;
    CompressedFeature(
        f.0.iter()
            .map(|v| (v - stats0.mu) * scale + train.mu)
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalEncoding {
    pub sin: f64,
    pub cos: f64,
    pub s: f64,
}

impl GoalEncoding {
    pub fn to_array(self) -> [f64; 3] {
        [self.sin, self.cos, self.s]
    }
}

pub fn encode_goal(d: f64, s: f64) -> Result<GoalEncoding, FeatureError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(FeatureError::Progress(s));
    }
    let (sin, cos) = d.sin_cos();
    Ok(GoalEncoding { sin, cos, s })
}

/// `1 − remaining/total`, clamped to `[0, 1]`.
pub fn progress(total: f64, remaining: f64) -> f64 {
    (1.0 - remaining / total).clamp(0.0, 1.0)
}

/// Two affine maps `3 → 256`; weights are row-major `[3][256]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilmParams {
    pub w_gamma: Vec<f64>,
    pub b_gamma: Vec<f64>,
    pub w_beta: Vec<f64>,
    pub b_beta: Vec<f64>,
}

impl FilmParams {
    /// `γ ≡ 1`, `β ≡ 0`.
    pub fn identity() -> Self {
        Self {
            w_gamma: vec![0.0; GOAL_DIM * FEATURE_DIM],
            b_gamma: vec![1.0; FEATURE_DIM],
            w_beta: vec![0.0; GOAL_DIM * FEATURE_DIM],
            b_beta: vec![0.0; FEATURE_DIM],
        }
    }

    fn affine(w: &[f64], b: &[f64], d: [f64; 3]) -> Vec<f64> {
        (0..b.len())
            .map(|j| {
                b[j] + (0..GOAL_DIM)
                    .map(|i| d[i] * w[i * b.len() + j])
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn gamma(&self, goal: &GoalEncoding) -> Vec<f64> {
        Self::affine(&self.w_gamma, &self.b_gamma, goal.to_array())
    }

    pub fn beta(&self, goal: &GoalEncoding) -> Vec<f64> {
        Self::affine(&self.w_beta, &self.b_beta, goal.to_array())
    }
}

/// `γ(D) ⊙ f̂ + β(D)`.
pub fn film_fuse(f_hat: &CompressedFeature, goal: &GoalEncoding, params: &FilmParams) -> Vec<f64> {
    let g = params.gamma(goal);
    let b = params.beta(goal);
    f_hat
        .0
        .iter()
        .zip(g.iter().zip(&b))
        .map(|(f, (g, b))| g * f + b)
        .collect()
}

/// Exactly `p` history entries: the `observed` frames (oldest first), with
/// missing older slots filled by the first observation.
pub fn pad_history<T: Clone>(observed: &[T], p: usize) -> Vec<T> {
    assert!(!observed.is_empty(), "at least one observation is required");
    let keep = &observed[observed.len().saturating_sub(p)..];
    let mut out = vec![observed[0].clone(); p - keep.len()];
    out.extend_from_slice(keep);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn raw_from(values: Vec<f64>, channels: usize) -> RawFeatureMap {
        RawFeatureMap {
            channels,
            data: values,
        }
    }

    #[test]
    fn compress_examples() {
        let raw = raw_from((0..CELLS * CHANNELS).map(|v| v as f64).collect(), CHANNELS);
        let c = compress(&raw, &[0.0; CHANNELS], 1.5).unwrap();
        assert_eq!(c.0, vec![1.5; CELLS]);
        let single = raw_from((0..CELLS).map(|v| v as f64 * 0.5).collect(), 1);
        assert_eq!(compress(&single, &[1.0], 0.0).unwrap().0, single.data);
        assert!(compress(&raw, &[1.0; 3], 0.0).is_err());
    }

    #[test]
    fn stats_examples() {
        assert!(matches!(
            fit_reference_stats(&[CompressedFeature(vec![1.0; CELLS])]),
            Err(FeatureError::ZeroVariance(_))
        ));
        let s = fit_reference_stats(&[
            CompressedFeature(vec![0.0; CELLS]),
            CompressedFeature(vec![2.0; CELLS]),
        ])
        .unwrap();
        assert!((s.mu - 1.0).abs() < 1e-15 && (s.sigma - 1.0).abs() < 1e-15);
        assert_eq!(fit_reference_stats(&[]), Err(FeatureError::Empty));
    }

    #[test]
    fn normalize_examples() {
        let f = CompressedFeature(vec![6.0]);
        let out = normalize(
            &f,
            &NormStats {
                mu: 2.0,
                sigma: 4.0,
            },
            &NormStats::IDENTITY,
        );
        assert_eq!(out.0, vec![1.0]);
        let s = NormStats {
            mu: 0.3,
            sigma: 2.0,
        };
        let g = CompressedFeature(vec![0.1, -4.0, 7.5]);
        assert_eq!(normalize(&g, &s, &s).0, g.0);
    }

    #[test]
    fn normalized_initial_frame_has_training_moments() {
        let f = CompressedFeature(
            (0..CELLS)
                .map(|k| ((k * 37) % 11) as f64 * 0.3 - 1.0)
                .collect(),
        );
        let train = NormStats {
            mu: 0.7,
            sigma: 2.5,
        };
        let out = normalize(&f, &frame_stats(&f).unwrap(), &train);
        let s = frame_stats(&out).unwrap();
        assert!((s.mu - 0.7).abs() < 1e-12 && (s.sigma - 2.5).abs() < 1e-12);
    }

    #[test]
    fn goal_examples() {
        let g = encode_goal(0.0, 0.5).unwrap();
        assert_eq!(g.to_array(), [0.0, 1.0, 0.5]);
        let g = encode_goal(FRAC_PI_2, 0.0).unwrap();
        assert!((g.sin - 1.0).abs() < 1e-15 && g.cos.abs() < 1e-15);
        assert!((progress(10.0, 4.0) - 0.6).abs() < 1e-15);
        assert!(encode_goal(0.0, 1.2).is_err());
    }

    #[test]
    fn film_examples() {
        let f = CompressedFeature((0..FEATURE_DIM).map(|k| k as f64 * 0.01).collect());
        let goal = encode_goal(0.4, 0.3).unwrap();
        assert_eq!(film_fuse(&f, &goal, &FilmParams::identity()), f.0);
        let mut p = FilmParams::identity();
        p.b_gamma = vec![0.0; FEATURE_DIM];
        p.b_beta = (0..FEATURE_DIM).map(|k| -(k as f64)).collect();
        assert_eq!(film_fuse(&f, &goal, &p), p.b_beta);
    }

    #[test]
    fn padding_rule() {
        assert_eq!(pad_history(&[7], 3), vec![7, 7, 7]);
        assert_eq!(pad_history(&[7, 8], 3), vec![7, 7, 8]);
        assert_eq!(pad_history(&[1, 2, 3, 4, 5], 3), vec![3, 4, 5]);
    }

    proptest! {
        #[test]
        fn normalization_composes(
            v in proptest::collection::vec(-10.0f64..10.0, 1..40),
            a in (-3.0f64..3.0, 0.1f64..5.0),
            b in (-3.0f64..3.0, 0.1f64..5.0),
            c in (-3.0f64..3.0, 0.1f64..5.0),
        ) {
            let (a, b, c) = (
                NormStats { mu: a.0, sigma: a.1 },
                NormStats { mu: b.0, sigma: b.1 },
                NormStats { mu: c.0, sigma: c.1 },
            );
            let f = CompressedFeature(v);
            let twice = normalize(&normalize(&f, &a, &b), &b, &c);
            let once = normalize(&f, &a, &c);
            for (x, y) in twice.0.iter().zip(&once.0) {
                prop_assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn stats_are_order_invariant(v in proptest::collection::vec(-5.0f64..5.0, 4..30)) {
            let feats: Vec<CompressedFeature> = v.chunks(2).map(|c| CompressedFeature(c.to_vec())).collect();
            let mut rev = feats.clone();
            rev.reverse();
            if let (Ok(a), Ok(b)) = (fit_reference_stats(&feats), fit_reference_stats(&rev)) {
                prop_assert!((a.mu - b.mu).abs() < 1e-12 && (a.sigma - b.sigma).abs() < 1e-12);
            }
        }

        #[test]
        fn goal_is_unit_circle(d in -10.0f64..10.0, s in 0.0f64..=1.0) {
            let g = encode_goal(d, s).unwrap();
            prop_assert!((g.sin * g.sin + g.cos * g.cos - 1.0).abs() < 1e-9);
        }

        #[test]
        fn history_has_p_entries(n in 1usize..10, p in 1usize..6) {
            let obs: Vec<usize> = (0..n).collect();
            let h = pad_history(&obs, p);
            prop_assert_eq!(h.len(), p);
            prop_assert_eq!(*h.last().unwrap(), n - 1);
        }
    }
}
