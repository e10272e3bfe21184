//! Least-squares Tofts fitting with a small L-BFGS.
//!
//! Bounds are enforced by reparameterization: `K^trans = exp(ln lo + (ln hi -
//! ln lo) σ(u))` and `v_e = lo + (hi - lo) σ(w)`, with `σ` the logistic
//! function, so the optimizer itself is unconstrained.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::horsfield::horsfield_with_sensitivities;
use super::FitConfig;

/// One voxel's estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelFit {
    pub ktrans: f64,
    pub ve: f64,
    /// Final cost `½ Σ (model - ct)²`.
    pub residual: f64,
    pub converged: bool,
}

/// Cost `½ Σ (C(ktrans, ve) - ct)²` and its gradient in `(ktrans, ve)`.
pub fn cost_and_gradient(ct: &[f64], cp: &[f64], dt_s: f64, ktrans: f64, ve: f64) -> (f64, [f64; 2]) {
    let (model, sens) = horsfield_with_sensitivities(cp, ktrans, ve, dt_s);
    let mut cost = 0.0;
    let mut g = [0.0; 2];
    for ((m, s), c) in model.iter().zip(&sens).zip(ct) {
        let r = m - c;
        cost += 0.5 * r * r;
        g[0] += r * s[0];
        g[1] += r * s[1];
    }
    (cost, g)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Reparam {
    ln_k_lo: f64,
    ln_k_span: f64,
    ve_lo: f64,
    ve_span: f64,
}

impl Reparam {
    fn new(config: &FitConfig) -> Self {
        let (klo, khi) = config.ktrans_bounds;
        let (vlo, vhi) = config.ve_bounds;
        Self { ln_k_lo: klo.ln(), ln_k_span: khi.ln() - klo.ln(), ve_lo: vlo, ve_span: vhi - vlo }
    }

    /// `(ktrans, ve)` and the diagonal Jacobian.
    fn map(&self, z: &[f64; 2]) -> ([f64; 2], [f64; 2]) {
        let su = logistic(z[0]);
        let sw = logistic(z[1]);
        let k = (self.ln_k_lo + self.ln_k_span * su).exp();
        let ve = self.ve_lo + self.ve_span * sw;
        ([k, ve], [k * self.ln_k_span * su * (1.0 - su), self.ve_span * sw * (1.0 - sw)])
    }
}

struct Outcome {
    z: [f64; 2],
    cost: f64,
    converged: bool,
}

fn dot(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn lbfgs(f: &impl Fn(&[f64; 2]) -> (f64, [f64; 2]), z0: [f64; 2], config: &FitConfig) -> Outcome {
    let mut z = z0;
    let (mut fz, mut g) = f(&z);
    let mut hist: Vec<([f64; 2], [f64; 2], f64)> = Vec::with_capacity(config.history_size);
    for _ in 0..config.max_lbfgs_iters {
        let gnorm = g[0].abs().max(g[1].abs());
        if gnorm <= config.grad_tol {
            return Outcome { z, cost: fz, converged: true };
        }
        // two-loop recursion
        let mut q = g;
        let mut alpha = vec![0.0; hist.len()];
        for (i, (s, y, rho)) in hist.iter().enumerate().rev() {
            alpha[i] = rho * dot(s, &q);
            q[0] -= alpha[i] * y[0];
            q[1] -= alpha[i] * y[1];
        }
        let gamma = hist.last().map_or(1.0 / gnorm.max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        let mut d = [q[0] * gamma, q[1] * gamma];
        for (i, (s, y, rho)) in hist.iter().enumerate() {
            let beta = rho * dot(y, &d);
            d[0] += s[0] * (alpha[i] - beta);
            d[1] += s[1] * (alpha[i] - beta);
        }
        d = [-d[0], -d[1]];
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = [-g[0] / gnorm.max(1.0), -g[1] / gnorm.max(1.0)];
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let zn = [z[0] + step * d[0], z[1] + step * d[1]];
            let (fnew, gnew) = f(&zn);
            if fnew.is_finite() && fnew <= fz + 1e-4 * step * slope {
                accepted = Some((zn, fnew, gnew));
                break;
            }
            step *= 0.5;
        }
        let Some((zn, fnew, gnew)) = accepted else {
            return Outcome { z, cost: fz, converged: gnorm <= config.grad_tol.sqrt() };
        };
        let s = [zn[0] - z[0], zn[1] - z[1]];
        let y = [gnew[0] - g[0], gnew[1] - g[1]];
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if hist.len() == config.history_size {
                hist.remove(0);
            }
            hist.push((s, y, 1.0 / sy));
        }
        let drop = fz - fnew;
        z = zn;
        fz = fnew;
        g = gnew;
        if drop <= config.cost_tol * fz.abs().max(1.0) {
            return Outcome { z, cost: fz, converged: true };
        }
    }
    Outcome { z, cost: fz, converged: false }
}

/// Fits one concentration series; `stream` selects the random starts.
pub fn fit_voxel_seeded(ct: &[f64], cp: &[f64], dt_s: f64, config: &FitConfig, stream: u64) -> VoxelFit {
    let rp = Reparam::new(config);
    let f = |z: &[f64; 2]| {
        let (p, jac) = rp.map(z);
        let (c, g) = cost_and_gradient(ct, cp, dt_s, p[0], p[1]);
        (c, [g[0] * jac[0], g[1] * jac[1]])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let mut best: Option<Outcome> = None;
    for _ in 0..config.n_starts.max(1) {
        let z0 = [logit(rng.random_range(0.05..0.95)), logit(rng.random_range(0.05..0.95))];
        let out = lbfgs(&f, z0, config);
        if best.as_ref().is_none_or(|b| out.cost < b.cost) {
            best = Some(out);
        }
    }
    let best = best.expect("at least one start");
    let (p, _) = rp.map(&best.z);
    VoxelFit { ktrans: p[0], ve: p[1], residual: best.cost, converged: best.converged }
}

pub fn fit_voxel(ct: &[f64], cp: &[f64], dt_s: f64, config: &FitConfig) -> VoxelFit {
    fit_voxel_seeded(ct, cp, dt_s, config, 0)
}
