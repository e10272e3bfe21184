//! Variance stabilization for Rician magnitude data.
//!
//! The forward transform `f` is built numerically so that `f(z)` has roughly
//! unit variance whatever the underlying SNR. Working in units of `σ_g`, let
//! `m(θ)` and `s(θ) = sqrt(ξ(θ))` be the Rician mean and standard deviation.
//! On the mean axis `f` solves `df/dm = 1/s(θ(m))`; below the Rayleigh mean it
//! continues linearly down to `f(0) = 0`, and above the last knot with slope
//! `1/s(θ_max)`.
//!
//! The inverse used after denoising is the *unbiased* one: a denoised value
//! estimates `E[f(z) | y]`, so it is mapped back through a tabulated
//! `y -> E[f(z) | y]` rather than through `f⁻¹`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::noise::{bessel_i0_scaled, correction_factor, debias_magnitude, rician_mean, NoiseMethod, RicianStats};
use crate::volume::{TimeSeriesVolume, ValueKind};

const KNOTS: usize = 2049;
const THETA_MAX: f64 = 60.0;
// f is piecewise linear, so one high-order rule converges slowly; use
// short composite panels instead.
const QUADRATURE_POINTS: usize = 8;
const PANEL_WIDTH: f64 = 0.5;
const QUADRATURE_HALF_WIDTH: f64 = 7.5;

/// Tabulated forward stabilizer and its unbiased inverse.
#[derive(Debug, Clone)]
pub struct Stabilizer {
    sigma_g: f64,
    theta_grid: Vec<f64>,
    /// `m(θ_k)`, in units of σ_g.
    mean_grid: Vec<f64>,
    f_values: Vec<f64>,
    /// `E[f(z) | θ_k]`.
    expected: Vec<f64>,
    low_slope: f64,
    high_slope: f64,
}

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Rician density of `u = z/σ_g` at SNR `θ`, without overflow.
fn rician_density(u: f64, theta: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    u * (-0.5 * (u - theta) * (u - theta)).exp() * bessel_i0_scaled(u * theta)
}

/// Index `k` with `grid[k] <= x < grid[k+1]`, clamped to the table.
fn bracket(grid: &[f64], x: f64) -> usize {
    match grid.binary_search_by(|g| g.total_cmp(&x)) {
        Ok(k) => k.min(grid.len() - 2),
        Err(k) => k.saturating_sub(1).min(grid.len() - 2),
    }
}

fn lerp(x0: f64, x1: f64, y0: f64, y1: f64, x: f64) -> f64 {
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Builds the stabilizer for noise level `sigma_g`.
pub fn build_stabilizer(sigma_g: f64) -> Result<Stabilizer> {
    if !(sigma_g > 0.0 && sigma_g.is_finite()) {
        return Err(Error::Argument(format!("stabilizer needs sigma_g > 0, got {sigma_g}")));
    }
    let theta_grid: Vec<f64> = (0..KNOTS).map(|k| THETA_MAX * k as f64 / (KNOTS - 1) as f64).collect();
    let mean_grid: Vec<f64> = theta_grid.iter().map(|&t| rician_mean(t)).collect();
    let inv_std: Vec<f64> = theta_grid.iter().map(|&t| 1.0 / correction_factor(t).sqrt()).collect();

    let mut f_values = Vec::with_capacity(KNOTS);
    f_values.push(mean_grid[0] * inv_std[0]);
    for k in 1..KNOTS {
        let dm = mean_grid[k] - mean_grid[k - 1];
        f_values.push(f_values[k - 1] + dm * 0.5 * (inv_std[k - 1] + inv_std[k]));
    }

    let mut stab = Stabilizer {
        sigma_g,
        low_slope: inv_std[0],
        high_slope: inv_std[KNOTS - 1],
        theta_grid,
        mean_grid,
        f_values,
        expected: Vec::new(),
    };

    let (nodes, weights) = gauss_legendre(QUADRATURE_POINTS);
    let expected = stab
        .theta_grid
        .iter()
        .map(|&theta| {
            let lo = (theta - QUADRATURE_HALF_WIDTH).max(0.0);
            let hi = theta + QUADRATURE_HALF_WIDTH;
            let panels = ((hi - lo) / PANEL_WIDTH).ceil() as usize;
            let width = (hi - lo) / panels as f64;
            let (mut mass, mut acc) = (0.0, 0.0);
            for k in 0..panels {
                let mid = lo + (k as f64 + 0.5) * width;
                for (x, w) in nodes.iter().zip(&weights) {
                    let u = mid + 0.5 * width * x;
                    let p = w * rician_density(u, theta);
                    mass += p;
                    acc += p * stab.forward_unit(u);
                }
            }
            acc / mass
        })
        .collect();
    stab.expected = expected;
    Ok(stab)
}

impl Stabilizer {
    pub fn sigma_g(&self) -> f64 {
        self.sigma_g
    }

    pub fn theta_grid(&self) -> &[f64] {
        &self.theta_grid
    }

    /// `f` on the σ-normalized axis.
    fn forward_unit(&self, u: f64) -> f64 {
        let m = &self.mean_grid;
        let last = m.len() - 1;
        if u <= m[0] {
            u * self.low_slope
        } else if u >= m[last] {
            self.f_values[last] + (u - m[last]) * self.high_slope
        } else {
            let k = bracket(m, u);
            lerp(m[k], m[k + 1], self.f_values[k], self.f_values[k + 1], u)
        }
    }

    /// Stabilized value of a magnitude sample.
    pub fn forward(&self, z: f64) -> f64 {
        self.forward_unit(z / self.sigma_g)
    }

    /// Exact inverse of [`Stabilizer::forward`] (not bias-corrected).
    pub fn algebraic_inverse(&self, v: f64) -> f64 {
        let f = &self.f_values;
        let last = f.len() - 1;
        let u = if v <= f[0] {
            v / self.low_slope
        } else if v >= f[last] {
            self.mean_grid[last] + (v - f[last]) / self.high_slope
        } else {
            let k = bracket(f, v);
            lerp(f[k], f[k + 1], self.mean_grid[k], self.mean_grid[k + 1], v)
        };
        u * self.sigma_g
    }

    /// `E[f(z) | y]` for true signal `y`.
    pub fn expected_forward(&self, y: f64) -> f64 {
        let theta = y / self.sigma_g;
        let (t, e) = (&self.theta_grid, &self.expected);
        let last = t.len() - 1;
        if theta >= t[last] {
            let slope = (e[last] - e[last - 1]) / (t[last] - t[last - 1]);
            e[last] + (theta - t[last]) * slope
        } else {
            let k = bracket(t, theta.max(0.0));
            lerp(t[k], t[k + 1], e[k], e[k + 1], theta.max(0.0))
        }
    }

    /// Unbiased inverse: the `y` whose expected stabilized value is `d`.
    /// Values below `E[f(z) | 0]` clamp to zero; the flag reports a clamp.
    pub fn unbiased_inverse(&self, d: f64) -> (f64, bool) {
        let (t, e) = (&self.theta_grid, &self.expected);
        let last = t.len() - 1;
        let theta = if d < e[0] {
            return (0.0, true);
        } else if d >= e[last] {
            let slope = (e[last] - e[last - 1]) / (t[last] - t[last - 1]);
            t[last] + (d - e[last]) / slope
        } else {
            let k = bracket(e, d);
            lerp(e[k], e[k + 1], t[k], t[k + 1], d)
        };
        (theta * self.sigma_g, false)
    }
}

/// Forward VST of an intensity volume.
pub fn apply_vst(volume: &TimeSeriesVolume, stabilizer: &Stabilizer) -> Result<TimeSeriesVolume> {
    if volume.value_kind() != ValueKind::Intensity {
        return Err(Error::Argument(format!("VST expects intensity data, got {:?}", volume.value_kind())));
    }
    if let Some(v) = volume.data().iter().find(|&&v| v < 0.0) {
        return Err(Error::Data(format!("negative magnitude {v}")));
    }
    let data = volume.data().par_iter().map(|&z| stabilizer.forward(z)).collect();
    volume.with_data(ValueKind::Stabilized, data)
}

/// Counters from an inverse transform.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IvstDiagnostics {
    /// Samples below the invertible range, clamped to zero intensity.
    pub clamped: usize,
}

/// Unbiased inverse VST of a stabilized volume.
pub fn apply_ivst(volume: &TimeSeriesVolume, stabilizer: &Stabilizer) -> Result<(TimeSeriesVolume, IvstDiagnostics)> {
    if volume.value_kind() != ValueKind::Stabilized {
        return Err(Error::Argument(format!("inverse VST expects stabilized data, got {:?}", volume.value_kind())));
    }
    let pairs: Vec<(f64, bool)> = volume.data().par_iter().map(|&d| stabilizer.unbiased_inverse(d)).collect();
    let clamped = pairs.iter().filter(|p| p.1).count();
    let data = pairs.into_iter().map(|p| p.0).collect();
    Ok((volume.with_data(ValueKind::Intensity, data)?, IvstDiagnostics { clamped }))
}

/// Stopping rule for [`estimate_sigma_vst`].
#[derive(Debug, Clone, Copy)]
pub struct VstEstimateOptions {
    pub max_iterations: usize,
    /// Stop once the stabilized residual std is within this of 1.
    pub tolerance: f64,
}

impl Default for VstEstimateOptions {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 0.01 }
    }
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, &mut hi, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        hi
    } else {
        let lo = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// 1.4826 × MAD.
pub(crate) fn robust_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    let med = median(&mut v);
    for x in v.iter_mut() {
        *x = (*x - med).abs();
    }
    1.4826 * median(&mut v)
}

/// Iterative noise-level estimate: rescale `σ̂` until the stabilized data over
/// `roi` has unit residual spread.
///
/// Residuals are first temporal differences over `sqrt(2)`, measured with
/// 1.4826 × MAD. Noiseless or temporally constant input drives `σ̂` to zero
/// and is reported as a convergence error.
pub fn estimate_sigma_vst(
    volume: &TimeSeriesVolume,
    roi: &[usize],
    initial_sigma: f64,
    opts: &VstEstimateOptions,
) -> Result<RicianStats> {
    if roi.is_empty() {
        return Err(Error::Argument("VST noise estimation ROI is empty".into()));
    }
    if !(initial_sigma > 0.0 && initial_sigma.is_finite()) {
        return Err(Error::Argument(format!("initial sigma must be > 0, got {initial_sigma}")));
    }
    if volume.n_time() < 2 {
        return Err(Error::Argument("VST noise estimation needs at least 2 scans".into()));
    }
    let mut sigma = initial_sigma;
    for it in 1..=opts.max_iterations {
        let stab = build_stabilizer(sigma)?;
        let diffs: Vec<f64> = roi
            .iter()
            .flat_map(|&v| {
                let s = volume.series(v);
                let stab = &stab;
                s.windows(2).map(move |w| (stab.forward(w[1]) - stab.forward(w[0])) / std::f64::consts::SQRT_2)
            })
            .collect();
        let spread = robust_std(&diffs);
        sigma *= spread;
        if !(sigma >= 1e-6 * initial_sigma && sigma <= 1e6 * initial_sigma) {
            return Err(Error::Convergence {
                what: "VST noise estimate",
                reason: format!("sigma left [1e-6, 1e6] x initial ({sigma:e}) at iteration {it}"),
            });
        }
        if (spread - 1.0).abs() < opts.tolerance {
            let n = (roi.len() * volume.n_time()) as f64;
            let mean = roi.iter().flat_map(|&v| volume.series(v)).sum::<f64>() / n;
            let y_hat = debias_magnitude(mean, sigma);
            return Ok(RicianStats {
                sigma_g: sigma,
                snr: y_hat / sigma,
                y_hat,
                method: NoiseMethod::VstIterative,
                iterations: it,
            });
        }
    }
    Err(Error::Convergence {
        what: "VST noise estimate",
        reason: format!("no convergence in {} iterations", opts.max_iterations),
    })
}
