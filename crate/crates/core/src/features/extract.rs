use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RawFeatureMap, CELLS, CHANNELS, GRID};
use crate::imaging::{visible_range, WaterType};
use crate::world::DepthImage;

/// Smallest depth used for the inverse-depth channel.
pub const MIN_DEPTH: f64 = 0.1;
pub const NEAR: f64 = 1.0;
pub const FAR: f64 = 3.0;

/// Common interface of the depth-feature encoders.
pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, depth: &DepthImage, frame_seed: u64) -> RawFeatureMap;
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Oracle,
    Degraded,
}

impl std::str::FromStr for ExtractorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "oracle" => Ok(Self::Oracle),
            "degraded" => Ok(Self::Degraded),
            other => Err(format!(
                "unknown extractor '{other}' (expected oracle or degraded)"
            )),
        }
    }
}

impl ExtractorKind {
    /// `water = None` means clear water.
    pub fn build(self, water: Option<WaterType>) -> Box<dyn FeatureExtractor> {
        match self {
            Self::Oracle => Box::new(OracleExtractor),
            Self::Degraded => Box::new(DegradedExtractor { water }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleExtractor;

impl FeatureExtractor for OracleExtractor {
    fn extract(&self, depth: &DepthImage, _frame_seed: u64) -> RawFeatureMap {
        extract_oracle(depth)
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

/// Depth is distorted like an encoder that was never exposed to turbid water.
#[derive(Debug, Clone, Default)]
pub struct DegradedExtractor {
    pub water: Option<WaterType>,
}

impl FeatureExtractor for DegradedExtractor {
    fn extract(&self, depth: &DepthImage, frame_seed: u64) -> RawFeatureMap {
        match &self.water {
            Some(w) => extract_degraded(depth, w, frame_seed),
            None => extract_oracle(depth),
        }
    }

    fn name(&self) -> &'static str {
        "degraded"
    }
}

/// Pools a depth image to 16×16 cells and emits the eight geometric channels.
pub fn extract_oracle(depth: &DepthImage) -> RawFeatureMap {
    let (w, h) = (depth.width, depth.height);
    let mut sums = vec![[0.0f64; 6]; CELLS];
    let mut counts = vec![0usize; CELLS];
    for row in 0..h {
        let gy = row * GRID / h;
        for col in 0..w {
            let gx = col * GRID / w;
            let k = gy * GRID + gx;
            let z = depth.at(row, col);
            let zc = z.clamp(MIN_DEPTH, depth.max_range);
            let s = &mut sums[k];
            s[0] += 1.0 / zc;
            s[1] += zc;
            s[3] += (z < NEAR) as u8 as f64;
            s[4] += (NEAR..FAR).contains(&z) as u8 as f64;
            s[5] += (z >= FAR) as u8 as f64;
            counts[k] += 1;
        }
    }
    let mean = |k: usize, i: usize| {
        if counts[k] == 0 {
            0.0
        } else {
            sums[k][i] / counts[k] as f64
        }
    };
    let pooled: Vec<f64> = (0..CELLS).map(|k| mean(k, 1)).collect();
    let at = |gx: usize, gy: usize| pooled[gy * GRID + gx];
    let mut data = vec![0.0; CELLS * CHANNELS];
    for gy in 0..GRID {
        for gx in 0..GRID {
            let k = gy * GRID + gx;
            let (l, r) = (gx.saturating_sub(1), (gx + 1).min(GRID - 1));
            let (u, d) = (gy.saturating_sub(1), (gy + 1).min(GRID - 1));
            let dx = (at(r, gy) - at(l, gy)) / (r - l) as f64;
            let dy = (at(gx, d) - at(gx, u)) / (d - u) as f64;
            let o = k * CHANNELS;
            data[o] = mean(k, 0);
            data[o + 1] = pooled[k];
            data[o + 2] = dx;
            data[o + 3] = dy;
            data[o + 4] = mean(k, 3);
            data[o + 5] = mean(k, 4);
            data[o + 6] = mean(k, 5);
            data[o + 7] = 1.0;
        }
    }
    RawFeatureMap {
        channels: CHANNELS,
        data,
    }
}

/// Depth as reported by the unadapted encoder.
///
/// Beyond `0.6·V.R.` depth is pushed towards `max_range` by a logistic blend
/// with slope `4/V.R.`; every pixel then receives multiplicative noise whose
/// amplitude grows with turbidity.
pub fn distort_depth(depth: &DepthImage, water: &WaterType, frame_seed: u64) -> DepthImage {
    let vr = visible_range(water);
    let onset = 0.6 * vr;
    let slope = 4.0 / vr;
    let amp = 0.1 * (1.0 - (-depth.max_range / vr).exp());
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
    let mut out = depth.clone();
    for z in out.data.iter_mut() {
        let mut v = *z;
        if v > onset {
            let w = 2.0 * (1.0 / (1.0 + (-slope * (v - onset)).exp()) - 0.5);
            v += w * (depth.max_range - v);
        }
        let noise: f64 = rng.gen_range(-1.0..=1.0);
        *z = (v * (1.0 + amp * noise)).min(depth.max_range);
    }
    out
}

pub fn extract_degraded(depth: &DepthImage, water: &WaterType, frame_seed: u64) -> RawFeatureMap {
    extract_oracle(&distort_depth(depth, water, frame_seed))
}
