use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::PlannerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AltitudeRefineConfig {
    /// Segment length `Q`.
    pub q: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub v_z_max: f64,
    pub dt: f64,
}

impl Default for AltitudeRefineConfig {
    fn default() -> Self {
        Self {
            q: 32,
            lambda1: 10.0,
            lambda2: 10.0,
            v_z_max: 0.2,
            dt: 0.1,
        }
    }
}

/// Objective value of a full heave sequence `u` (including the pinned `u[0]`).
pub fn altitude_objective(
    u: &[f64],
    v: &[f64],
    z_t: f64,
    z_0: f64,
    cfg: &AltitudeRefineConfig,
) -> f64 {
    let mut z = z_t;
    let mut f = 0.0;
    for m in 1..u.len() {
        z += cfg.dt * u[m];
        f += (z - z_0).powi(2)
            + cfg.lambda1 * (u[m] - u[m - 1]).powi(2)
            + cfg.lambda2 * (u[m] - v[m]).powi(2);
    }
    f
}

/// `½xᵀHx + cᵀx` form over the free commands `x = u[1..Q]`.
fn quadratic(
    v: &[f64],
    z_t: f64,
    z_0: f64,
    cfg: &AltitudeRefineConfig,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = v.len() - 1;
    let e = z_t - z_0;
    let dt = cfg.dt;
    let mut h = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    for i in 0..n {
        for j in 0..n {
            // (LᵀL)_ij = number of rows m ≥ max(i,j)
            h[(i, j)] = 2.0 * dt * dt * (n - i.max(j)) as f64;
        }
    }
    for i in 0..n {
        c[i] = 2.0 * dt * e * (n - i) as f64 - 2.0 * cfg.lambda2 * v[i + 1];
        h[(i, i)] += 2.0 * cfg.lambda2 + 2.0 * cfg.lambda1 * if i + 1 < n { 2.0 } else { 1.0 };
        if i + 1 < n {
            h[(i, i + 1)] -= 2.0 * cfg.lambda1;
            h[(i + 1, i)] -= 2.0 * cfg.lambda1;
        }
    }
    c[0] -= 2.0 * cfg.lambda1 * v[0];
    (h, c)
}

#[derive(Clone, Copy, PartialEq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Primal active-set solve of `min ½xᵀHx + cᵀx` over `|x_i| ≤ r`, `H` positive definite.
fn box_qp(h: &DMatrix<f64>, c: &DVector<f64>, r: f64) -> DVector<f64> {
    let n = c.len();
    let mut x = DVector::zeros(n);
    let mut state = vec![Bound::Free; n];
    for _ in 0..10 * (n + 1) * (n + 1) {
        let free: Vec<usize> = (0..n).filter(|i| state[*i] == Bound::Free).collect();
        let mut target = x.clone();
        if !free.is_empty() {
            let nf = free.len();
            let hff = DMatrix::from_fn(nf, nf, |a, b| h[(free[a], free[b])]);
            let rhs = DVector::from_fn(nf, |a, _| {
                let i = free[a];
                -c[i]
                    - (0..n)
                        .filter(|j| state[*j] != Bound::Free)
                        .map(|j| h[(i, j)] * x[j])
                        .sum::<f64>()
            });
            let sol = hff
                .cholesky()
                .expect("positive definite Hessian")
                .solve(&rhs);
            for (a, i) in free.iter().enumerate() {
                target[*i] = sol[a];
            }
        }
        // longest feasible step towards the subspace minimizer
        let mut alpha = 1.0;
        let mut block = None;
        for &i in &free {
            let d = target[i] - x[i];
            if d > 0.0 && target[i] > r {
                let a = (r - x[i]) / d;
                if a < alpha {
                    alpha = a;
                    block = Some((i, Bound::Upper));
                }
            } else if d < 0.0 && target[i] < -r {
                let a = (-r - x[i]) / d;
                if a < alpha {
                    alpha = a;
                    block = Some((i, Bound::Lower));
                }
            }
        }
        for &i in &free {
            x[i] += alpha * (target[i] - x[i]);
        }
        if let Some((i, b)) = block {
            state[i] = b;
            x[i] = if b == Bound::Upper { r } else { -r };
            continue;
        }
        let g = h * &x + c;
        let worst = (0..n)
            .filter_map(|i| match state[i] {
                Bound::Lower if g[i] < 0.0 => Some((i, -g[i])),
                Bound::Upper if g[i] > 0.0 => Some((i, g[i])),
                _ => None,
            })
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((i, _)) => state[i] = Bound::Free,
            None => return x,
        }
    }
    x
}

/// Heave refinement towards the reference altitude with the first command pinned.
///
/// `v` holds the `Q` heave commands of the velocity plan, `z_t` the current
/// altitude and `z_0` the reference altitude.
pub fn refine_altitude(
    v: &[f64],
    z_t: f64,
    z_0: f64,
    cfg: &AltitudeRefineConfig,
) -> Result<Vec<f64>, PlannerError> {
    if v.len() != cfg.q || cfg.q == 0 {
        return Err(PlannerError::InvalidInput(format!(
            "heave segment has {} entries, expected Q = {}",
            v.len(),
            cfg.q
        )));
    }
    if !(z_t.is_finite() && z_0.is_finite() && v.iter().all(|x| x.is_finite())) {
        return Err(PlannerError::InvalidInput(
            "non-finite altitude input".into(),
        ));
    }
    if v[0].abs() > cfg.v_z_max {
        return Err(PlannerError::InvalidInput(format!(
            "pinned heave command {} exceeds the limit {}",
            v[0], cfg.v_z_max
        )));
    }
    if cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0 || cfg.dt <= 0.0 {
        return Err(PlannerError::InvalidInput(
            "altitude weights must be non-negative and dt positive".into(),
        ));
    }
    let mut out = vec![v[0]];
    if cfg.q > 1 {
        let (h, c) = quadratic(v, z_t, z_0, cfg);
        out.extend(box_qp(&h, &c, cfg.v_z_max).iter());
    }
    Ok(out)
}
