use crate::{ParamGrads, ParamSet};

/// AdamW with decoupled weight decay and optional global-norm clipping.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            clip_norm: None,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamGrads) -> f64 {
        let norm = grads.global_norm();
        let clip = match self.clip_norm {
            Some(c) if norm > c && norm > 0.0 => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g[i] * clip;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * p[i]);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Graph, Tensor};

    #[test]
    fn minimizes_quadratic() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::new(&[3], vec![2.0, -1.0, 0.5]));
        let mut opt = AdamW::new(&ps, 0.05);
        opt.weight_decay = 0.0;
        for _ in 0..500 {
            let grads = {
                let mut g = Graph::new(&ps);
                let x = g.param(w);
                let sq = g.mul(x, x);
                let l = g.sum(sq);
                g.backward(l)
            };
            opt.step(&mut ps, &grads);
        }
        assert!(ps.get(w).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::new(&[2], vec![1.0, 1.0]));
        let mut opt = AdamW::new(&ps, 0.1);
        opt.weight_decay = 0.0;
        let mut grads = ParamGrads::zeros_like(&ps);
        grads.get_mut(0).copy_from_slice(&[3.0, -0.5]);
        opt.step(&mut ps, &grads);
        let d = ps.get(w).data();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn clipping_reports_raw_norm() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::zeros(&[2]));
        let mut opt = AdamW::new(&ps, 0.1);
        opt.clip_norm = Some(1.0);
        let mut grads = ParamGrads::zeros_like(&ps);
        grads.get_mut(0).copy_from_slice(&[3.0, 4.0]);
        assert!((opt.step(&mut ps, &grads) - 5.0).abs() < 1e-12);
    }
}
