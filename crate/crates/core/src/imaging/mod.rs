//! Underwater image formation: attenuation, backscatter, depth-dependent
//! forward scattering and marine snow.

mod perlin;

pub use perlin::{perlin, NoiseField};

use serde::{Deserialize, Serialize};

use crate::world::{ClearImage, DepthImage};

/// Width of the depth bins used by [`forward_scatter`].
pub const SCATTER_BIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterType {
    pub name: String,
    /// Attenuation per RGB channel, 1/m.
    pub beta: [f64; 3],
    /// Ambient backscatter colour.
    pub b_inf: [f64; 3],
    /// Blur growth in pixels per meter.
    pub sigma_h: f64,
    /// Marine-snow strength.
    pub k_m: f64,
}

impl WaterType {
    pub fn ic() -> Self {
        Self {
            name: "IC".into(),
            beta: [0.83, 0.44, 0.55],
            b_inf: [0.01, 0.40, 0.44],
            sigma_h: 0.1,
            k_m: 0.001,
        }
    }

    pub fn c3() -> Self {
        Self {
            name: "3C".into(),
            beta: [3.18, 1.14, 1.47],
            b_inf: [0.03, 0.32, 0.31],
            sigma_h: 0.2,
            k_m: 0.002,
        }
    }

    pub fn c7() -> Self {
        Self {
            name: "7C".into(),
            beta: [3.18, 3.55, 4.40],
            b_inf: [0.01, 0.09, 0.03],
            sigma_h: 0.3,
            k_m: 0.003,
        }
    }

    /// `"IC" | "3C" | "7C"`, case-insensitive.
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "IC" => Some(Self::ic()),
            "3C" => Some(Self::c3()),
            "7C" => Some(Self::c7()),
            _ => None,
        }
    }

    pub fn presets() -> [Self; 3] {
        [Self::ic(), Self::c3(), Self::c7()]
    }

    pub fn validate(&self) -> bool {
        self.beta.iter().all(|b| *b > 0.0)
            && self.b_inf.iter().all(|b| (0.0..=1.0).contains(b))
            && self.sigma_h >= 0.0
            && self.k_m >= 0.0
    }
}

/// Distance at which the least attenuated channel keeps 1% of its direct signal.
pub fn visible_range(water: &WaterType) -> f64 {
    let min_beta = water.beta.iter().copied().fold(f64::INFINITY, f64::min);
    100f64.ln() / min_beta
}

/// Image formation at a single pixel before clamping.
pub fn formation(j: [f64; 3], z: f64, m: f64, water: &WaterType) -> [f64; 3] {
    std::array::from_fn(|c| {
        let t = (-water.beta[c] * z).exp();
        j[c] * t + water.b_inf[c] * (1.0 - t) + snow_term(z, m, water, c)
    })
}

fn snow_term(z: f64, m: f64, water: &WaterType, c: usize) -> f64 {
    water.k_m * m * (1.0 - water.b_inf[c]) * (1.0 - (-water.beta[c] * z).exp())
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable normalized Gaussian blur with clamped borders.
fn blur(img: &ClearImage, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return img.data.clone();
    }
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width as i64, img.height as i64);
    let mut tmp = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (t, kv) in k.iter().enumerate() {
                let xx = (x + t as i64 - r).clamp(0, w - 1);
                let idx = ((y * w + xx) * 3) as usize;
                for c in 0..3 {
                    acc[c] += kv * img.data[idx + c];
                }
            }
            let o = ((y * w + x) * 3) as usize;
            tmp[o..o + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (t, kv) in k.iter().enumerate() {
                let yy = (y + t as i64 - r).clamp(0, h - 1);
                let idx = ((yy * w + x) * 3) as usize;
                for c in 0..3 {
                    acc[c] += kv * tmp[idx + c];
                }
            }
            let o = ((y * w + x) * 3) as usize;
            out[o..o + 3].copy_from_slice(&acc);
        }
    }
    out
}

/// Depth-dependent blur with `σ = sigma_h · z` pixels.
///
/// The image is blurred once per depth bin and each pixel blends the two
/// bins that bracket its depth.
pub fn forward_scatter(image: &ClearImage, depth: &DepthImage, sigma_h: f64) -> ClearImage {
    assert_eq!(
        (image.width, image.height),
        (depth.width, depth.height),
        "image and depth sizes differ"
    );
    if sigma_h == 0.0 {
        return image.clone();
    }
    let bin_of = |z: f64| (z.max(0.0) / SCATTER_BIN).floor() as usize;
    let top = depth.data.iter().map(|z| bin_of(*z) + 1).max().unwrap_or(0);
    let mut needed = vec![false; top + 1];
    for z in &depth.data {
        let b = bin_of(*z);
        needed[b] = true;
        needed[b + 1] = true;
    }
    let blurred: Vec<Option<Vec<f64>>> = needed
        .iter()
        .enumerate()
        .map(|(b, need)| need.then(|| blur(image, sigma_h * b as f64 * SCATTER_BIN)))
        .collect();
    let mut out = image.clone();
    for (p, z) in depth.data.iter().enumerate() {
        let f = z.max(0.0) / SCATTER_BIN;
        let b = f.floor() as usize;
        let w = f - b as f64;
        let lo = blurred[b].as_ref().expect("bin prepared");
        let hi = blurred[b + 1].as_ref().expect("bin prepared");
        for c in 0..3 {
            let i = p * 3 + c;
            out.data[i] = if w == 0.0 {
                lo[i]
            } else {
                (1.0 - w) * lo[i] + w * hi[i]
            };
        }
    }
    out
}

/// Additive marine-snow term per pixel and channel.
pub fn marine_snow(depth: &DepthImage, water: &WaterType, field: &NoiseField) -> ClearImage {
    let mut out = ClearImage::filled(depth.width, depth.height, [0.0; 3]);
    for row in 0..depth.height {
        for col in 0..depth.width {
            let z = depth.at(row, col);
            let m = field.sample(col as f64, row as f64);
            let o = (row * depth.width + col) * 3;
            for c in 0..3 {
                out.data[o + c] = snow_term(z, m, water, c);
            }
        }
    }
    out
}

/// Full formation model without the final clamp.
pub fn degrade_unclamped(
    clear: &ClearImage,
    depth: &DepthImage,
    water: &WaterType,
    field: &NoiseField,
) -> ClearImage {
    let scattered = forward_scatter(clear, depth, water.sigma_h);
    let snow = marine_snow(depth, water, field);
    let mut out = scattered;
    for p in 0..depth.data.len() {
        let z = depth.data[p];
        for c in 0..3 {
            let i = p * 3 + c;
            let t = (-water.beta[c] * z).exp();
            out.data[i] = out.data[i] * t + water.b_inf[c] * (1.0 - t) + snow.data[i];
        }
    }
    out
}

/// Degraded observation of a clear scene, clamped to `[0, 1]`.
pub fn degrade(
    clear: &ClearImage,
    depth: &DepthImage,
    water: &WaterType,
    field: &NoiseField,
) -> ClearImage {
    let mut out = degrade_unclamped(clear, depth, water, field);
    out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn depth(w: usize, h: usize, z: f64) -> DepthImage {
        DepthImage::filled(w, h, 6.0, z)
    }

    #[test]
    fn presets_match_table() {
        let ic = WaterType::preset("ic").unwrap();
        assert_eq!(ic.beta, [0.83, 0.44, 0.55]);
        assert_eq!(ic.b_inf, [0.01, 0.40, 0.44]);
        assert_eq!((ic.sigma_h, ic.k_m), (0.1, 0.001));
        let c3 = WaterType::preset("3C").unwrap();
        assert_eq!(c3.beta, [3.18, 1.14, 1.47]);
        assert_eq!(c3.b_inf, [0.03, 0.32, 0.31]);
        assert_eq!((c3.sigma_h, c3.k_m), (0.2, 0.002));
        let c7 = WaterType::preset("7c").unwrap();
        assert_eq!(c7.beta, [3.18, 3.55, 4.40]);
        assert_eq!(c7.b_inf, [0.01, 0.09, 0.03]);
        assert_eq!((c7.sigma_h, c7.k_m), (0.3, 0.003));
        assert!(WaterType::preset("9C").is_none());
        assert!(WaterType::presets().iter().all(WaterType::validate));
    }

    #[test]
    fn visible_ranges() {
        for (w, want) in WaterType::presets().iter().zip([10.47, 4.04, 1.45]) {
            assert!((visible_range(w) - want).abs() < 0.01, "{}", w.name);
        }
    }

    #[test]
    fn zero_blur_and_constant_image_unchanged() {
        let mut img = ClearImage::filled(12, 9, [0.2, 0.5, 0.7]);
        img.data[40] = 0.9;
        let mut d = depth(12, 9, 1.3);
        assert_eq!(forward_scatter(&img, &d, 0.0), img);
        let flat = ClearImage::filled(12, 9, [0.3, 0.6, 0.1]);
        d.data[7] = 4.4;
        let out = forward_scatter(&flat, &d, 0.3);
        for (a, b) in out.data.iter().zip(&flat.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn snow_vanishes_at_zero_depth() {
        let f = NoiseField::new(1);
        let s = marine_snow(&depth(8, 8, 0.0), &WaterType::c7(), &f);
        assert!(s.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn snow_approaches_limit() {
        let f = NoiseField::new(1);
        let w = WaterType::ic();
        let s = marine_snow(&depth(8, 8, 1e4), &w, &f);
        for row in 0..8 {
            for col in 0..8 {
                let m = f.sample(col as f64, row as f64);
                for c in 0..3 {
                    let want = w.k_m * m * (1.0 - w.b_inf[c]);
                    assert!((s.pixel(row, col)[c] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn degrade_is_identity_at_zero_depth_without_blur() {
        let mut img = ClearImage::filled(10, 10, [0.1, 0.4, 0.9]);
        img.data[33] = 0.0;
        let w = WaterType {
            sigma_h: 0.0,
            ..WaterType::c3()
        };
        let out = degrade(&img, &depth(10, 10, 0.0), &w, &NoiseField::new(2));
        assert_eq!(out, img);
    }

    proptest! {
        #[test]
        fn snow_nondecreasing_in_depth(z in 0.0f64..10.0, dz in 0.0f64..5.0, m in 0.0f64..1.0) {
            for w in WaterType::presets() {
                for c in 0..3 {
                    prop_assert!(snow_term(z + dz, m, &w, c) >= snow_term(z, m, &w, c));
                }
            }
        }

        #[test]
        fn direct_and_backscatter_are_monotone(z in 0.0f64..3.0, dz in 1e-3f64..2.0, j in 0.01f64..1.0) {
            for w in WaterType::presets() {
                for c in 0..3 {
                    let direct = |z: f64| j * (-w.beta[c] * z).exp();
                    let back = |z: f64| w.b_inf[c] * (1.0 - (-w.beta[c] * z).exp());
                    prop_assert!(direct(z + dz) < direct(z));
                    prop_assert!(back(z + dz) > back(z));
                }
            }
        }

        #[test]
        fn unclamped_output_is_bounded(seed in 0u64..50, z in 0.0f64..6.0, v in 0.0f64..1.0) {
            let img = ClearImage::filled(6, 6, [v, 1.0 - v, 0.5]);
            let mut d = depth(6, 6, z);
            d.data[5] = 6.0;
            for w in WaterType::presets() {
                let out = degrade_unclamped(&img, &d, &w, &NoiseField::new(seed));
                let bound = 1.0 + w.b_inf.iter().copied().fold(0.0, f64::max) + w.k_m;
                prop_assert!(out.data.iter().all(|x| *x <= bound));
                let clamped = degrade(&img, &d, &w, &NoiseField::new(seed));
                prop_assert!(clamped.data.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }
    }
}
