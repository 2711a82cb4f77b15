use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MAX_AMPLITUDE: f64 = 0.7072;

/// Seeded two-octave gradient noise, remapped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    pub seed: u64,
    /// Base frequency in cycles per pixel.
    pub frequency: f64,
    pub octaves: usize,
    pub persistence: f64,
    perm: Vec<u8>,
}

impl NoiseField {
    pub fn new(seed: u64) -> Self {
        Self::with_params(seed, 0.1, 2, 0.5)
    }

    pub fn with_params(seed: u64, frequency: f64, octaves: usize, persistence: f64) -> Self {
        let mut p: Vec<u8> = (0..=255u8).collect();
        p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let perm = p.iter().chain(p.iter()).copied().collect();
        Self {
            seed,
            frequency,
            octaves: octaves.max(1),
            persistence,
            perm,
        }
    }

    fn hash(&self, i: i64, j: i64) -> usize {
        let a = self.perm[(i & 255) as usize] as usize;
        self.perm[a + (j & 255) as usize] as usize
    }

    /// Single-octave noise in roughly `[-0.7071, 0.7071]`.
    pub fn raw(&self, x: f64, y: f64) -> f64 {
        let (xf, yf) = (x.floor(), y.floor());
        let (i, j) = (xf as i64, yf as i64);
        let (u, v) = (x - xf, y - yf);
        let grad = |h: usize, dx: f64, dy: f64| -> f64 {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            match h & 7 {
                0 => dx,
                1 => -dx,
                2 => dy,
                3 => -dy,
                4 => s * (dx + dy),
                5 => s * (dx - dy),
                6 => s * (-dx + dy),
                _ => s * (-dx - dy),
            }
        };
        let n00 = grad(self.hash(i, j), u, v);
        let n10 = grad(self.hash(i + 1, j), u - 1.0, v);
        let n01 = grad(self.hash(i, j + 1), u, v - 1.0);
        let n11 = grad(self.hash(i + 1, j + 1), u - 1.0, v - 1.0);
        let (fu, fv) = (fade(u), fade(v));
        let a = n00 + fu * (n10 - n00);
        let b = n01 + fu * (n11 - n01);
        a + fv * (b - a)
    }

    /// Octave sum at pixel coordinates, mapped into `[0, 1]`.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (mut sum, mut amp, mut norm, mut f) = (0.0, 1.0, 0.0, self.frequency);
        for _ in 0..self.octaves {
            sum += amp * self.raw(x * f, y * f);
            norm += amp;
            amp *= self.persistence;
            f *= 2.0;
        }
        (0.5 + 0.5 * sum / (norm * MAX_AMPLITUDE)).clamp(0.0, 1.0)
    }
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Noise value `M(x, y)` in `[0, 1]`.
pub fn perlin(field: &NoiseField, x: f64, y: f64) -> f64 {
    field.sample(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_at_lattice_points() {
        let f = NoiseField::new(4);
        for (x, y) in [(0.0, 0.0), (3.0, -7.0), (12.0, 5.0)] {
            assert_eq!(f.raw(x, y), 0.0);
        }
    }

    #[test]
    fn seeds_differ() {
        let a = NoiseField::new(1);
        let b = NoiseField::new(2);
        let differs =
            (0..50).any(|k| a.sample(k as f64 * 1.3, 2.7) != b.sample(k as f64 * 1.3, 2.7));
        assert!(differs);
    }

    proptest! {
        #[test]
        fn bounded_and_deterministic(seed in 0u64..1000, x in -1e3f64..1e3, y in -1e3f64..1e3) {
            let f = NoiseField::new(seed);
            let v = perlin(&f, x, y);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, perlin(&NoiseField::new(seed), x, y));
            prop_assert!(f.raw(x, y).abs() <= MAX_AMPLITUDE);
        }

        #[test]
        fn continuous(seed in 0u64..100, x in -50.0f64..50.0, y in -50.0f64..50.0) {
            let f = NoiseField::new(seed);
            let h = 1e-7;
            prop_assert!((f.sample(x + h, y) - f.sample(x, y)).abs() < 1e-5);
            prop_assert!((f.sample(x, y + h) - f.sample(x, y)).abs() < 1e-5);
        }
    }
}
