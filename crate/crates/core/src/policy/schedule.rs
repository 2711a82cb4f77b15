use serde::{Deserialize, Serialize};

/// Offset of the cosine variance schedule.
const COSINE_S: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Per-step coefficients of the reverse update
/// `A^{k-1} = α_k (A^k − γ_k ε̂) + σ_k z`, indexed `1..=K` (slot 0 unused).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub k: usize,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn cosine(k: usize) -> Self {
        assert!(k >= 1, "schedule needs at least one step");
        let f = |t: usize| {
            let x =
                (t as f64 / k as f64 + COSINE_S) / (1.0 + COSINE_S) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let mut beta = vec![0.0; k + 1];
        let mut alpha_bar = vec![1.0; k + 1];
        for t in 1..=k {
            beta[t] = (1.0 - f(t) / f(t - 1)).clamp(0.0, MAX_BETA);
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t]);
        }
        let mut alpha = vec![0.0; k + 1];
        let mut gamma = vec![0.0; k + 1];
        let mut sigma = vec![0.0; k + 1];
        for t in 1..=k {
            alpha[t] = 1.0 / (1.0 - beta[t]).sqrt();
            gamma[t] = beta[t] / (1.0 - alpha_bar[t]).sqrt();
            sigma[t] = ((1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t]).sqrt();
        }
        Self {
            k,
            beta,
            alpha_bar,
            alpha,
            gamma,
            sigma,
        }
    }

    /// Forward corruption `√ᾱ_k·a + √(1−ᾱ_k)·ε`.
    pub fn corrupt(&self, a: &[f64], eps: &[f64], k: usize) -> Vec<f64> {
        let (s, n) = (self.alpha_bar[k].sqrt(), (1.0 - self.alpha_bar[k]).sqrt());
        a.iter().zip(eps).map(|(a, e)| s * a + n * e).collect()
    }

    pub fn is_valid(&self) -> bool {
        self.beta.len() == self.k + 1
            && [&self.alpha, &self.gamma, &self.sigma, &self.alpha_bar]
                .iter()
                .all(|v| v.len() == self.k + 1 && v.iter().all(|x| x.is_finite()))
            && self.sigma[1] == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_shape() {
        let s = DiffusionSchedule::cosine(10);
        assert!(s.is_valid());
        assert_eq!(s.sigma[1], 0.0);
        for t in 1..=10 {
            assert!(s.beta[t] > 0.0 && s.beta[t] <= MAX_BETA);
            assert!(s.alpha_bar[t] < s.alpha_bar[t - 1]);
            assert!(s.sigma[t] >= 0.0);
        }
        assert!(s.alpha_bar[10] < 1e-3);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let s = DiffusionSchedule::cosine(10);
        let f = |t: f64| {
            (((t / 10.0 + COSINE_S) / (1.0 + COSINE_S)) * std::f64::consts::FRAC_PI_2)
                .cos()
                .powi(2)
        };
        let ab1 = f(1.0) / f(0.0);
        assert!((s.alpha_bar[1] - ab1).abs() < 1e-15);
        assert!((s.gamma[1] - (1.0 - ab1) / (1.0 - ab1).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exact_noise_estimate_recovers_clean_sample_at_first_step() {
        let s = DiffusionSchedule::cosine(10);
        let a = [0.3, -0.7, 0.1];
        let eps = [1.2, 0.4, -0.9];
        let x1 = s.corrupt(&a, &eps, 1);
        for i in 0..3 {
            let x0 = s.alpha[1] * (x1[i] - s.gamma[1] * eps[i]);
            assert!((x0 - a[i]).abs() < 1e-12);
        }
    }
}
