//! Rician noise statistics and noise-level estimation on magnitude data.
//!
//! For a magnitude sample `z = |y + n_r + i n_i|` with Gaussian channel noise of
//! standard deviation `σ_g`, the SNR is `θ = y / σ_g`. The magnitude variance is
//! `ξ(θ) σ_g²` and the magnitude mean is `m(θ) σ_g`. Given a pooled sample mean
//! `μ_m` and standard deviation `σ_m`, `θ` is the fixed point of
//! `θ = sqrt(ξ(θ)(1 + μ_m²/σ_m²) - 2)`, which has a valid root only when
//! `μ_m / σ_m >= sqrt(π / (4 - π))`.

mod bessel;

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use bessel::{bessel_i, bessel_i0, bessel_i0_scaled, bessel_i1, bessel_i1_scaled};

use crate::error::{Error, Result};
use crate::volume::TimeSeriesVolume;
use crate::vst::{estimate_sigma_vst, VstEstimateOptions};

/// Lowest magnitude SNR `μ_m/σ_m` for which the fixed-point equation has a root.
pub fn snr_threshold() -> f64 {
    (PI / (4.0 - PI)).sqrt()
}

/// Which estimator produced a [`RicianStats`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMethod {
    FixedPoint,
    VstIterative,
}

/// Estimated Rician noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RicianStats {
    pub sigma_g: f64,
    /// `θ = y / σ_g`; infinite when the samples carry no noise at all.
    pub snr: f64,
    pub y_hat: f64,
    pub method: NoiseMethod,
    pub iterations: usize,
}

/// Above this SNR the closed form loses digits to cancellation and the
/// large-θ expansion takes over (truncation error below 1e-17 there).
const XI_SERIES_FROM: f64 = 30.0;

// ξ = 1 - Σ c_k θ^{-2k}
const XI_SERIES: [f64; 6] = [0.5, 0.5, 11.0 / 8.0, 51.0 / 8.0, 669.0 / 16.0, 5685.0 / 16.0];

/// Correction factor `ξ(θ)` relating magnitude variance to channel variance.
pub fn correction_factor(theta: f64) -> f64 {
    debug_assert!(theta >= 0.0);
    if theta > XI_SERIES_FROM {
        let e2 = 1.0 / (theta * theta);
        return 1.0 - XI_SERIES.iter().rev().fold(0.0, |acc, c| (acc + c) * e2);
    }
    let t2 = theta * theta;
    let x = 0.25 * t2;
    let g = (2.0 + t2) * bessel_i0_scaled(x) + t2 * bessel_i1_scaled(x);
    2.0 + t2 - PI / 8.0 * g * g
}

/// `dξ/dθ`, using `d/dθ [(2+θ²) I0e(θ²/4) + θ² I1e(θ²/4)] = θ (I0e + I1e)`.
pub fn correction_factor_derivative(theta: f64) -> f64 {
    if theta > XI_SERIES_FROM {
        let e2 = 1.0 / (theta * theta);
        let sum = XI_SERIES.iter().enumerate().rev().fold(0.0, |acc, (k, c)| (acc + 2.0 * (k + 1) as f64 * c) * e2);
        return sum / theta;
    }
    let t2 = theta * theta;
    let x = 0.25 * t2;
    let (i0, i1) = (bessel_i0_scaled(x), bessel_i1_scaled(x));
    let g = (2.0 + t2) * i0 + t2 * i1;
    2.0 * theta - PI / 4.0 * g * theta * (i0 + i1)
}

/// Rician mean in units of `σ_g`: `E[z] / σ_g` at SNR `θ`.
pub fn rician_mean(theta: f64) -> f64 {
    let t2 = theta * theta;
    let x = 0.25 * t2;
    (PI / 2.0).sqrt() * ((1.0 + 0.5 * t2) * bessel_i0_scaled(x) + 0.5 * t2 * bessel_i1_scaled(x))
}

/// `d/dθ` of [`rician_mean`].
pub fn rician_mean_derivative(theta: f64) -> f64 {
    let x = 0.25 * theta * theta;
    (PI / 2.0).sqrt() * 0.5 * theta * (bessel_i0_scaled(x) + bessel_i1_scaled(x))
}

/// Options for the Newton solve of the fixed-point SNR equation.
#[derive(Debug, Clone, Copy)]
pub struct SnrSolverOptions {
    /// Use `dξ/dθ` from Bessel identities; otherwise central differences.
    pub analytic_derivative: bool,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SnrSolverOptions {
    fn default() -> Self {
        Self { analytic_derivative: true, max_iterations: 100, tolerance: 1e-12 }
    }
}

/// Solves for `θ` from magnitude mean and standard deviation.
pub fn fixed_point_snr(mu_m: f64, sigma_m: f64) -> Result<RicianStats> {
    fixed_point_snr_with(mu_m, sigma_m, &SnrSolverOptions::default())
}

pub fn fixed_point_snr_with(mu_m: f64, sigma_m: f64, opts: &SnrSolverOptions) -> Result<RicianStats> {
    if !(mu_m > 0.0 && mu_m.is_finite()) || !(sigma_m >= 0.0 && sigma_m.is_finite()) {
        return Err(Error::Argument(format!("need mu_m > 0 and sigma_m >= 0, got {mu_m}, {sigma_m}")));
    }
    if sigma_m <= 1e-14 * mu_m {
        return Ok(RicianStats {
            sigma_g: 0.0,
            snr: f64::INFINITY,
            y_hat: mu_m,
            method: NoiseMethod::FixedPoint,
            iterations: 0,
        });
    }
    let ratio = mu_m / sigma_m;
    let threshold = snr_threshold();
    if ratio < threshold {
        return Err(Error::BelowThreshold { ratio, threshold });
    }
    let scale = 1.0 + ratio * ratio;
    let xi_prime = |t: f64| {
        if opts.analytic_derivative {
            correction_factor_derivative(t)
        } else {
            let h = 1e-6 * t.max(1.0);
            let lo = (t - h).max(0.0);
            (correction_factor(t + h) - correction_factor(lo)) / (t + h - lo)
        }
    };

    let mut theta = (ratio * ratio - 1.0).max(0.0).sqrt().max(0.1);
    for it in 1..=opts.max_iterations {
        let inner = correction_factor(theta) * scale - 2.0;
        let g = inner.max(0.0).sqrt();
        let next = if g > 0.0 {
            let dg = xi_prime(theta) * scale / (2.0 * g);
            let denom = dg - 1.0;
            if denom.abs() < 1e-300 {
                return Err(Error::Convergence {
                    what: "fixed-point SNR",
                    reason: format!("flat Newton step at theta = {theta}"),
                });
            }
            (theta - (g - theta) / denom).max(0.0)
        } else {
            0.0
        };
        let step = (next - theta).abs();
        theta = next;
        // At the threshold the root at zero is triple and Newton only creeps
        // toward it until `ξ scale - 2` drowns in rounding; σ_g no longer
        // depends on θ down there.
        if step <= opts.tolerance * theta.max(1.0) || theta < 1e-7 {
            let sigma_g = sigma_m / correction_factor(theta).sqrt();
            return Ok(RicianStats {
                sigma_g,
                snr: theta,
                y_hat: theta * sigma_g,
                method: NoiseMethod::FixedPoint,
                iterations: it,
            });
        }
    }
    Err(Error::Convergence {
        what: "fixed-point SNR",
        reason: format!("no convergence in {} Newton steps", opts.max_iterations),
    })
}

/// Estimates the true signal behind a magnitude mean, given the noise level.
///
/// Inverts `E[z] = σ_g m(θ)`; equivalent to the fixed-point equation with
/// `σ_m = σ_g sqrt(ξ(θ))`. Means below the Rayleigh mean map to zero.
pub fn debias_magnitude(mu_m: f64, sigma_g: f64) -> f64 {
    if sigma_g <= 0.0 {
        return mu_m.max(0.0);
    }
    let target = mu_m / sigma_g;
    if target <= rician_mean(0.0) {
        return 0.0;
    }
    // m(θ) >= θ, so the root lies in [0, target].
    let (mut lo, mut hi) = (0.0, target);
    let mut theta = (target * target - 1.0).max(0.0).sqrt().clamp(lo, hi);
    for _ in 0..200 {
        let f = rician_mean(theta) - target;
        if f > 0.0 {
            hi = theta;
        } else {
            lo = theta;
        }
        let d = rician_mean_derivative(theta);
        let newton = theta - f / d;
        let next = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - theta).abs() <= 1e-14 * target.max(1.0) {
            theta = next;
            break;
        }
        theta = next;
    }
    theta * sigma_g
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Dual noise estimation over `roi` (flat voxel indices).
///
/// When `homogeneous` is set, all ROI voxels over the pre-contrast scans are
/// pooled and solved with the fixed-point formula. If the region is not
/// homogeneous, or the pooled magnitude SNR is below threshold, the VST-based
/// iterative estimator runs instead.
pub fn estimate_noise_dual(
    volume: &TimeSeriesVolume,
    roi: &[usize],
    pre_contrast: Range<usize>,
    homogeneous: bool,
) -> Result<RicianStats> {
    if roi.is_empty() {
        return Err(Error::Argument("noise estimation ROI is empty".into()));
    }
    if pre_contrast.is_empty() || pre_contrast.end > volume.n_time() {
        return Err(Error::Argument(format!(
            "pre-contrast range {pre_contrast:?} not within [0, {})",
            volume.n_time()
        )));
    }
    if let Some(&bad) = roi.iter().find(|&&v| v >= volume.n_voxels()) {
        return Err(Error::Argument(format!("ROI voxel {bad} outside volume")));
    }
    let pooled: Vec<f64> = roi.iter().flat_map(|&v| volume.series(v)[pre_contrast.clone()].iter().copied()).collect();
    let (mu, sigma) = mean_std(&pooled);

    if homogeneous && mu > 0.0 {
        match fixed_point_snr(mu, sigma) {
            Ok(stats) => return Ok(stats),
            Err(Error::BelowThreshold { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let initial = if sigma > 0.0 { sigma } else { (1e-3 * mu).max(1e-9) };
    estimate_sigma_vst(volume, roi, initial, &VstEstimateOptions::default())
}
