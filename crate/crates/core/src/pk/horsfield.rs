//! Tofts forward model by exact recursion over a piecewise-linear AIF.
//!
//! With `x = k_ep Δt` and `E = exp(-x)`, convolving a plasma curve that is
//! linear between samples gives
//!
//! ```text
//! C(t) = E C(t-1) + K' [a(x) Cp(t-1) + b(x) Cp(t)],   K' = K^trans Δt
//! a(x) = (1 - E - x E) / x²,   b(x) = (x - 1 + E) / x²
//! ```
//!
//! Δt is in minutes so that K^trans is in min⁻¹.

const SERIES_BELOW: f64 = 1e-2;

/// `a(x)` and `b(x)` (see module docs).
pub(crate) fn weights(x: f64) -> (f64, f64) {
    if x < SERIES_BELOW {
        let a = 0.5 + x * (-1.0 / 3.0 + x * (1.0 / 8.0 + x * (-1.0 / 30.0 + x / 144.0)));
        let b = 0.5 + x * (-1.0 / 6.0 + x * (1.0 / 24.0 + x * (-1.0 / 120.0 + x / 720.0)));
        (a, b)
    } else {
        let e = (-x).exp();
        let x2 = x * x;
        ((1.0 - e - x * e) / x2, (x - 1.0 + e) / x2)
    }
}

/// `a'(x)` and `b'(x)`.
pub(crate) fn weight_derivatives(x: f64) -> (f64, f64) {
    if x < SERIES_BELOW {
        let da = -1.0 / 3.0 + x * (1.0 / 4.0 + x * (-1.0 / 10.0 + x / 36.0));
        let db = -1.0 / 6.0 + x * (1.0 / 12.0 + x * (-1.0 / 40.0 + x / 180.0));
        (da, db)
    } else {
        let (a, b) = weights(x);
        let e = (-x).exp();
        (e / x - 2.0 * a / x, (1.0 - e) / (x * x) - 2.0 * b / x)
    }
}

/// Tissue concentration for plasma samples `cp` on the tissue grid.
pub fn horsfield_forward(cp: &[f64], ktrans: f64, ve: f64, dt_s: f64) -> Vec<f64> {
    assert!(ktrans >= 0.0 && ve > 0.0 && ve <= 1.0 && dt_s > 0.0, "invalid Tofts parameters");
    let dt = dt_s / 60.0;
    let kp = ktrans * dt;
    let x = kp / ve;
    let e = (-x).exp();
    let (a, b) = weights(x);
    let mut out = Vec::with_capacity(cp.len());
    let mut c = 0.0;
    for (t, &p) in cp.iter().enumerate() {
        if t > 0 {
            c = e * c + kp * (a * cp[t - 1] + b * p);
        }
        out.push(c);
    }
    out
}

/// Forward model with `∂C/∂K^trans` and `∂C/∂v_e`, by propagating
/// sensitivities through the recursion.
pub fn horsfield_with_sensitivities(cp: &[f64], ktrans: f64, ve: f64, dt_s: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
    let dt = dt_s / 60.0;
    let kp = ktrans * dt;
    let x = kp / ve;
    let e = (-x).exp();
    let (a, b) = weights(x);
    let (da, db) = weight_derivatives(x);
    let dx = [dt / ve, -x / ve];
    let dkp = [dt, 0.0];

    let mut c = 0.0;
    let mut dc = [0.0; 2];
    let mut out = Vec::with_capacity(cp.len());
    let mut sens = Vec::with_capacity(cp.len());
    for (t, &p) in cp.iter().enumerate() {
        if t > 0 {
            let q = cp[t - 1];
            let mix = a * q + b * p;
            let dmix = da * q + db * p;
            for i in 0..2 {
                dc[i] = -e * dx[i] * c + e * dc[i] + dkp[i] * mix + kp * dmix * dx[i];
            }
            c = e * c + kp * mix;
        }
        out.push(c);
        sens.push(dc);
    }
    (out, sens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{tofts_concentration_oracle, AifModel};

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    fn grid() -> (AifModel, Vec<f64>, Vec<f64>) {
        let aif = AifModel::default();
        let times: Vec<f64> = (0..61).map(|k| k as f64 * 6.0).collect();
        let cp = times.iter().map(|&t| aif.plasma(t)).collect();
        (aif, times, cp)
    }

    #[test]
    fn degenerate_inputs_give_zero() {
        let (_, _, cp) = grid();
        assert!(horsfield_forward(&cp, 0.0, 0.3, 6.0).iter().all(|&c| c == 0.0));
        assert!(horsfield_forward(&[0.0; 20], 0.2, 0.3, 6.0).iter().all(|&c| c == 0.0));
    }

    #[test]
    fn series_branch_is_continuous() {
        let (lo, hi) = (SERIES_BELOW * (1.0 - 1e-12), SERIES_BELOW * (1.0 + 1e-12));
        let (a0, b0) = weights(lo);
        let (a1, b1) = weights(hi);
        assert!((a0 - a1).abs() < 1e-12 && (b0 - b1).abs() < 1e-12);
        let (da0, db0) = weight_derivatives(lo);
        let (da1, db1) = weight_derivatives(hi);
        assert!((da0 - da1).abs() < 1e-9 && (db0 - db1).abs() < 1e-9);
    }

    #[test]
    fn matches_quadrature_oracle() {
        let (aif, times, cp) = grid();
        let exact = tofts_concentration_oracle(&aif, 0.1, 0.2, &times);
        let rec = horsfield_forward(&cp, 0.1, 0.2, 6.0);
        assert!(rel_l2(&rec, &exact) < 0.01);
    }

    #[test]
    fn printed_recursion_disagrees_with_the_oracle() {
        // C(t) = C(t-1) + K'(-a Cp(t-1) + b Cp(t)): no decay, sign flipped on a.
        let (aif, times, cp) = grid();
        let (k, ve) = (0.1, 0.2);
        let kp = k * 0.1;
        let (a, b) = weights(kp / ve);
        let mut c = vec![0.0; cp.len()];
        for t in 1..cp.len() {
            c[t] = c[t - 1] + kp * (-a * cp[t - 1] + b * cp[t]);
        }
        let exact = tofts_concentration_oracle(&aif, k, ve, &times);
        assert!(rel_l2(&c, &exact) > 0.5);
    }

    #[test]
    fn early_uptake_grows_with_ktrans() {
        let (_, _, cp) = grid();
        let mut prev = -1.0;
        for i in 0..20 {
            let c = horsfield_forward(&cp, 0.01 + 0.05 * i as f64, 0.3, 6.0)[11];
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        let (_, _, cp) = grid();
        let (k, ve) = (0.13, 0.27);
        let (c, s) = horsfield_with_sensitivities(&cp, k, ve, 6.0);
        assert_eq!(c, horsfield_forward(&cp, k, ve, 6.0));
        let h = 1e-6;
        let dk: Vec<f64> = horsfield_forward(&cp, k + h, ve, 6.0)
            .iter()
            .zip(horsfield_forward(&cp, k - h, ve, 6.0))
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect();
        let dv: Vec<f64> = horsfield_forward(&cp, k, ve + h, 6.0)
            .iter()
            .zip(horsfield_forward(&cp, k, ve - h, 6.0))
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect();
        for t in 0..cp.len() {
            assert!((s[t][0] - dk[t]).abs() <= 1e-6 * (1.0 + dk[t].abs()));
            assert!((s[t][1] - dv[t]).abs() <= 1e-6 * (1.0 + dv[t].abs()));
        }
    }
}
