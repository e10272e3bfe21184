//! Forward signal models and a synthetic reference object with known truth.
//!
//! The object is a 2-D grid of `(K^trans, v_e)` blocks, K^trans varying down the
//! rows and v_e across the columns, with a band of blood-filled rows at the
//! bottom that serves as the arterial ROI. Tissue intensities come from the
//! SPGR equation applied to the Tofts concentration, evaluated by fine-grid
//! quadrature rather than the recursion used for fitting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{AcquisitionParams, AifKind, AifSeries, ParamMap, TimeSeriesVolume, ValueKind};

/// Steady-state spoiled gradient-echo intensity at tissue concentration `ct` (mM).
pub fn spgr_signal(y0: f64, ct: f64, acq: &AcquisitionParams, t10_ms: f64) -> f64 {
    let a = acq.a(t10_ms);
    let b = acq.b(t10_ms);
    let e = (acq.d() * ct).exp();
    y0 * (1.0 - a * e) * acq.flip_rad().sin() / (1.0 - b * e)
}

/// Plasma concentration curve driving the phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AifModel {
    /// Linear rise over `rise_s` seconds to `a1 + a2`, then
    /// `a1 exp(-m1 τ) + a2 exp(-m2 τ)` with `τ` in minutes since the peak.
    Biexponential { a1: f64, m1: f64, a2: f64, m2: f64, rise_s: f64, onset_s: f64 },
    /// Piecewise-linear samples on absolute times; zero before `onset_s` and
    /// before the first sample, held constant after the last.
    Tabulated { times_s: Vec<f64>, values: Vec<f64>, onset_s: f64 },
}

impl Default for AifModel {
    fn default() -> Self {
        AifModel::Biexponential { a1: 5.0, m1: 1.0, a2: 1.5, m2: 0.05, rise_s: 6.0, onset_s: 60.0 }
    }
}

impl AifModel {
    pub fn onset_s(&self) -> f64 {
        match self {
            AifModel::Biexponential { onset_s, .. } | AifModel::Tabulated { onset_s, .. } => *onset_s,
        }
    }

    /// Same curve with the bolus moved to `onset_s` (tabulated times shift too).
    pub fn with_onset(&self, onset: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            AifModel::Biexponential { onset_s, .. } => *onset_s = onset,
            AifModel::Tabulated { times_s, onset_s, .. } => {
                let shift = onset - *onset_s;
                times_s.iter_mut().for_each(|t| *t += shift);
                *onset_s = onset;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AifModel::Biexponential { a1, m1, a2, m2, rise_s, onset_s } => {
                let vals = [*a1, *m1, *a2, *m2, *rise_s, *onset_s];
                if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::Spec(format!(
                        "biexponential AIF coefficients must be finite and >= 0: {vals:?}"
                    )));
                }
            }
            AifModel::Tabulated { times_s, values, onset_s } => {
                if times_s.is_empty() || times_s.len() != values.len() {
                    return Err(Error::Spec("tabulated AIF needs matching, non-empty times and values".into()));
                }
                if times_s.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Spec("tabulated AIF times must be strictly increasing".into()));
                }
                if values.iter().any(|v| !v.is_finite() || *v < 0.0) || !onset_s.is_finite() {
                    return Err(Error::Spec("tabulated AIF values must be finite and >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Plasma concentration (mM) at `t` seconds.
    pub fn plasma(&self, t: f64) -> f64 {
        match self {
            AifModel::Biexponential { a1, m1, a2, m2, rise_s, onset_s } => {
                let tau = t - onset_s;
                if tau < 0.0 {
                    0.0
                } else if tau < *rise_s {
                    (a1 + a2) * tau / rise_s
                } else {
                    let tm = (tau - rise_s) / 60.0;
                    a1 * (-m1 * tm).exp() + a2 * (-m2 * tm).exp()
                }
            }
            AifModel::Tabulated { times_s, values, onset_s } => {
                if t < *onset_s || t < times_s[0] {
                    return 0.0;
                }
                let last = times_s.len() - 1;
                if t >= times_s[last] {
                    return values[last];
                }
                let k = times_s.partition_point(|&x| x <= t) - 1;
                let f = (t - times_s[k]) / (times_s[k + 1] - times_s[k]);
                values[k] + f * (values[k + 1] - values[k])
            }
        }
    }
}

const ORACLE_STEP_S: f64 = 0.05;

/// Tofts concentration `K^trans ∫ C_p(u) exp(-k_ep (t-u)) du` at each of the
/// (non-decreasing) `times`, by trapezoidal quadrature on a grid of at most
/// 0.05 s aligned to every requested time.
pub fn tofts_concentration_oracle(aif: &AifModel, ktrans: f64, ve: f64, times: &[f64]) -> Vec<f64> {
    assert!(times.windows(2).all(|w| w[1] >= w[0]), "oracle times must be non-decreasing");
    let kep = if ktrans > 0.0 { ktrans / ve } else { 0.0 };
    let onset = aif.onset_s();
    let mut cur = onset;
    let mut integral = 0.0; // minutes × mM
    times
        .iter()
        .map(|&t| {
            if t <= onset {
                return 0.0;
            }
            if t > cur {
                let n = ((t - cur) / ORACLE_STEP_S).ceil().max(1.0) as usize;
                let h = (t - cur) / n as f64;
                let decay = (-kep * h / 60.0).exp();
                let hm = h / 60.0;
                let mut c0 = aif.plasma(cur);
                for i in 1..=n {
                    let s = if i == n { t } else { cur + i as f64 * h };
                    let c1 = aif.plasma(s);
                    integral = decay * integral + 0.5 * hm * (c0 * decay + c1);
                    c0 = c1;
                }
                cur = t;
            }
            ktrans * integral
        })
        .collect()
}

/// Replaces each value `y` by `|y + n_r + i n_i|` with `n_r, n_i ~ N(0, σ_g²)`.
///
/// Every voxel draws from its own stream of a seeded ChaCha8 generator, so the
/// output does not depend on the number of worker threads.
pub fn add_rician_noise(volume: &TimeSeriesVolume, sigma_g: f64, seed: u64) -> Result<TimeSeriesVolume> {
    if volume.value_kind() != ValueKind::Intensity {
        return Err(Error::Argument(format!("Rician noise applies to intensities, got {:?}", volume.value_kind())));
    }
    if !(sigma_g >= 0.0 && sigma_g.is_finite()) {
        return Err(Error::Argument(format!("sigma_g must be finite and >= 0, got {sigma_g}")));
    }
    if sigma_g == 0.0 {
        return Ok(volume.clone());
    }
    let n_time = volume.n_time();
    let mut data = vec![0.0; volume.data().len()];
    data.par_chunks_mut(n_time).zip(volume.data().par_chunks(n_time)).enumerate().for_each(|(voxel, (out, clean))| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(voxel as u64);
        for (o, &y) in out.iter_mut().zip(clean) {
            let nr: f64 = StandardNormal.sample(&mut rng);
            let ni: f64 = StandardNormal.sample(&mut rng);
            *o = (y + sigma_g * nr).hypot(sigma_g * ni);
        }
    });
    volume.with_data(ValueKind::Intensity, data)
}

/// Layout and acquisition of the synthetic reference object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroSpec {
    /// min⁻¹, one block row each.
    pub ktrans_grid: Vec<f64>,
    /// One block column each.
    pub ve_grid: Vec<f64>,
    pub block_px: usize,
    /// Rows of blood at the bottom of the image.
    pub aif_rows: usize,
    pub s0: f64,
    pub duration_s: f64,
    pub dt_s: f64,
    pub injection_time_s: f64,
    pub sigma_g: f64,
    /// Temporal oversampling of the emitted AIF curve.
    pub aif_upsample: usize,
}

impl Default for DroSpec {
    fn default() -> Self {
        Self {
            ktrans_grid: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.35],
            ve_grid: vec![0.01, 0.05, 0.1, 0.2, 0.5],
            block_px: 10,
            aif_rows: 10,
            s0: 500.0,
            duration_s: 360.0,
            dt_s: 6.0,
            injection_time_s: 60.0,
            sigma_g: 5.0,
            aif_upsample: 10,
        }
    }
}

impl DroSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| !v.is_empty() && v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&self.ktrans_grid) || !positive(&self.ve_grid) {
            return Err(Error::Spec("parameter grids must be non-empty and strictly positive".into()));
        }
        if self.ve_grid.iter().any(|&v| v > 1.0) {
            return Err(Error::Spec("ve values must be <= 1".into()));
        }
        if self.block_px == 0 || self.aif_upsample == 0 {
            return Err(Error::Spec("block_px and aif_upsample must be >= 1".into()));
        }
        if !(self.dt_s > 0.0 && self.duration_s > 0.0 && self.injection_time_s >= 0.0) {
            return Err(Error::Spec("dt_s and duration_s must be > 0, injection_time_s >= 0".into()));
        }
        if self.injection_time_s >= self.duration_s {
            return Err(Error::Spec("injection must happen before the end of the acquisition".into()));
        }
        let ratio = self.duration_s / self.dt_s;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Spec(format!("duration {} is not a multiple of dt {}", self.duration_s, self.dt_s)));
        }
        if !(self.sigma_g >= 0.0 && self.s0 > 0.0) {
            return Err(Error::Spec("sigma_g must be >= 0 and s0 > 0".into()));
        }
        Ok(())
    }

    /// Number of scans, including the one at t = 0.
    pub fn n_time(&self) -> usize {
        (self.duration_s / self.dt_s).round() as usize + 1
    }

    pub fn tissue_rows(&self) -> usize {
        self.ktrans_grid.len() * self.block_px
    }

    /// `[rows, cols]`.
    pub fn dims(&self) -> Vec<usize> {
        vec![self.tissue_rows() + self.aif_rows, self.ve_grid.len() * self.block_px]
    }

    /// Flat indices of the tissue blocks, in raster order.
    pub fn tissue_roi(&self) -> Vec<usize> {
        (0..self.tissue_rows() * self.dims()[1]).collect()
    }

    /// Flat indices of the blood rows.
    pub fn aif_roi(&self) -> Vec<usize> {
        let d = self.dims();
        (self.tissue_rows() * d[1]..d[0] * d[1]).collect()
    }

    /// `(ktrans index, ve index)` of a tissue voxel.
    pub fn block_of(&self, voxel: usize) -> Option<(usize, usize)> {
        let cols = self.dims()[1];
        let (r, c) = (voxel / cols, voxel % cols);
        (r < self.tissue_rows()).then(|| (r / self.block_px, c / self.block_px))
    }
}

/// Output of [`generate_dro`].
#[derive(Debug, Clone)]
pub struct Dro {
    pub noiseless: TimeSeriesVolume,
    pub noisy: TimeSeriesVolume,
    pub truth: ParamMap,
    /// Plasma concentration on the oversampled grid.
    pub aif_series: AifSeries,
}

/// Synthesizes the reference object. The AIF is moved so that its onset
/// coincides with `spec.injection_time_s`.
pub fn generate_dro(spec: &DroSpec, aif: &AifModel, acq: &AcquisitionParams, seed: u64) -> Result<Dro> {
    spec.validate()?;
    aif.validate()?;
    acq.validate()?;
    let aif = aif.with_onset(spec.injection_time_s);
    let n_time = spec.n_time();
    let times: Vec<f64> = (0..n_time).map(|k| k as f64 * spec.dt_s).collect();

    let mut block_curves = Vec::with_capacity(spec.ktrans_grid.len() * spec.ve_grid.len());
    for &k in &spec.ktrans_grid {
        for &ve in &spec.ve_grid {
            let ct = tofts_concentration_oracle(&aif, k, ve, &times);
            block_curves.push(ct.iter().map(|&c| spgr_signal(spec.s0, c, acq, acq.t10_tissue_ms)).collect::<Vec<_>>());
        }
    }
    let blood: Vec<f64> =
        times.iter().map(|&t| spgr_signal(spec.s0, aif.plasma(t) * (1.0 - acq.hct), acq, acq.t10_blood_ms)).collect();

    let dims = spec.dims();
    let n_ve = spec.ve_grid.len();
    let noiseless =
        TimeSeriesVolume::from_fn(dims.clone(), n_time, spec.dt_s, ValueKind::Intensity, |v, t| {
            match spec.block_of(v) {
                Some((i, j)) => block_curves[i * n_ve + j][t],
                None => blood[t],
            }
        })?;
    let noisy = add_rician_noise(&noiseless, spec.sigma_g, seed)?;

    let mut truth = ParamMap::empty(dims);
    for v in spec.tissue_roi() {
        let (i, j) = spec.block_of(v).expect("tissue voxel");
        truth.set(v, spec.ktrans_grid[i], spec.ve_grid[j], 0.0, true);
    }

    let f = spec.aif_upsample;
    let fine_dt = spec.dt_s / f as f64;
    let fine_times: Vec<f64> = (0..n_time * f).map(|k| k as f64 * fine_dt).collect();
    let plasma = fine_times.iter().map(|&t| aif.plasma(t)).collect();
    let aif_series = AifSeries::new(fine_times, plasma, AifKind::PlasmaConcentration, f)?;

    Ok(Dro { noiseless, noisy, truth, aif_series })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::correction_factor;

    #[test]
    fn baseline_signal() {
        // 500 (1 - A) sin 30° / (1 - A cos 30°), A = exp(-5/1000)
        let acq = AcquisitionParams::default();
        let s = spgr_signal(500.0, 0.0, &acq, 1000.0);
        assert!((s - 9.016_160_930_760_17).abs() < 1e-9, "{s}");
    }

    #[test]
    fn signal_rises_with_concentration() {
        let acq = AcquisitionParams::default();
        let mut prev = spgr_signal(500.0, 0.0, &acq, 1000.0);
        for i in 1..50 {
            let s = spgr_signal(500.0, i as f64 * 0.1, &acq, 1000.0);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn aif_shape() {
        let aif = AifModel::default();
        assert_eq!(aif.plasma(59.9), 0.0);
        assert_eq!(aif.plasma(60.0), 0.0);
        assert!((aif.plasma(63.0) - 3.25).abs() < 1e-12);
        assert!((aif.plasma(66.0) - 6.5).abs() < 1e-12);
        assert!(aif.plasma(126.0) < aif.plasma(66.0));
        let moved = aif.with_onset(30.0);
        assert_eq!(moved.plasma(36.0), aif.plasma(66.0));
    }

    #[test]
    fn tabulated_aif_interpolates() {
        let aif = AifModel::Tabulated { times_s: vec![10.0, 20.0, 30.0], values: vec![0.0, 2.0, 1.0], onset_s: 10.0 };
        aif.validate().unwrap();
        assert_eq!(aif.plasma(5.0), 0.0);
        assert!((aif.plasma(15.0) - 1.0).abs() < 1e-12);
        assert_eq!(aif.plasma(99.0), 1.0);
        let bad = AifModel::Tabulated { times_s: vec![1.0, 1.0], values: vec![0.0, 1.0], onset_s: 0.0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn oracle_zero_cases() {
        let aif = AifModel::default();
        let times: Vec<f64> = (0..61).map(|k| k as f64 * 6.0).collect();
        assert!(tofts_concentration_oracle(&aif, 0.0, 0.3, &times).iter().all(|&c| c == 0.0));
        let c = tofts_concentration_oracle(&aif, 0.1, 0.2, &times);
        assert!(c[..=10].iter().all(|&c| c == 0.0));
        assert!(c[11] > 0.0);
    }

    #[test]
    fn oracle_matches_closed_form_for_step_input() {
        // Constant plasma level P from the onset: C(t) = ve P (1 - exp(-kep t)).
        let aif = AifModel::Tabulated { times_s: vec![0.0], values: vec![2.0], onset_s: 0.0 };
        let (k, ve) = (0.3, 0.4);
        let times = [30.0, 90.0, 300.0];
        let c = tofts_concentration_oracle(&aif, k, ve, &times);
        for (t, c) in times.iter().zip(c) {
            let exact = ve * 2.0 * (1.0 - (-k / ve * t / 60.0).exp());
            // trapezoid steps of at most 0.05 s leave an O(h²) error near 1e-8
            assert!((c - exact).abs() < 1e-7 * exact, "t={t}: {c} vs {exact}");
        }
    }

    #[test]
    fn zero_sigma_is_identity() {
        let v = TimeSeriesVolume::from_fn(vec![3, 2], 4, 1.0, ValueKind::Intensity, |v, t| (v + t) as f64).unwrap();
        assert_eq!(add_rician_noise(&v, 0.0, 1).unwrap(), v);
    }

    fn constant_noisy(y: f64, sigma: f64, seed: u64) -> Vec<f64> {
        let v = TimeSeriesVolume::new(vec![1000, 100], 10, 1.0, ValueKind::Intensity, vec![y; 1_000_000]).unwrap();
        add_rician_noise(&v, sigma, seed).unwrap().into_data()
    }

    #[test]
    fn rayleigh_mean() {
        let z = constant_noisy(0.0, 2.0, 3);
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let expected = 2.0 * (std::f64::consts::PI / 2.0).sqrt();
        assert!((mean / expected - 1.0).abs() < 0.02);
    }

    #[test]
    fn variance_at_snr_five() {
        let z = constant_noisy(10.0, 2.0, 4);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        assert!(mean >= 10.0, "Rician bias is positive");
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 4.0 / correction_factor(5.0) - 1.0).abs() < 0.02);
    }

    #[test]
    fn noise_is_reproducible_across_pools() {
        let v = TimeSeriesVolume::from_fn(vec![7, 9], 5, 1.0, ValueKind::Intensity, |v, t| (v * t) as f64).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| add_rician_noise(&v, 1.5, 11).unwrap());
        let b = four.install(|| add_rician_noise(&v, 1.5, 11).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, add_rician_noise(&v, 1.5, 12).unwrap());
    }

    #[test]
    fn default_layout() {
        let spec = DroSpec::default();
        let dro = generate_dro(
            &DroSpec { sigma_g: 0.0, ..spec.clone() },
            &AifModel::default(),
            &AcquisitionParams::default(),
            0,
        )
        .unwrap();
        assert_eq!(dro.noiseless.dims(), &[70, 50]);
        assert_eq!(dro.noiseless.n_time(), 61);
        assert_eq!(spec.tissue_roi().len(), 3000);
        assert_eq!(spec.aif_roi().len(), 500);
        let blocks: std::collections::BTreeSet<_> =
            spec.tissue_roi().iter().map(|&v| spec.block_of(v).unwrap()).collect();
        assert_eq!(blocks.len(), 30);
        assert_eq!(dro.noisy, dro.noiseless);
        assert_eq!(dro.aif_series.len(), 610);
        dro.aif_series.check_covers(61).unwrap();
    }

    #[test]
    fn truth_map_matches_blocks() {
        let spec = DroSpec::default();
        let dro = generate_dro(&spec, &AifModel::default(), &AcquisitionParams::default(), 1).unwrap();
        let v = dro.noiseless.voxel_index(&[23, 41]);
        assert_eq!(dro.truth.ktrans[v], spec.ktrans_grid[2]);
        assert_eq!(dro.truth.ve[v], spec.ve_grid[4]);
        let aif_voxel = dro.noiseless.voxel_index(&[65, 3]);
        assert!(!dro.truth.converged[aif_voxel]);
    }

    #[test]
    fn pre_contrast_scans_are_flat() {
        let spec = DroSpec::default();
        let dro =
            generate_dro(&DroSpec { sigma_g: 0.0, ..spec }, &AifModel::default(), &AcquisitionParams::default(), 0)
                .unwrap();
        for s in dro.noiseless.series_iter() {
            assert!(s[..=10].iter().all(|&x| x == s[0]));
            assert!(s[11] > s[0]);
            // non-decreasing until the peak
            let peak = s.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert!(s[..=peak].windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn inconsistent_spec_is_rejected() {
        let acq = AcquisitionParams::default();
        let aif = AifModel::default();
        for spec in [
            DroSpec { ktrans_grid: vec![], ..DroSpec::default() },
            DroSpec { block_px: 0, ..DroSpec::default() },
            DroSpec { injection_time_s: 400.0, ..DroSpec::default() },
            DroSpec { duration_s: 361.0, ..DroSpec::default() },
            DroSpec { sigma_g: -1.0, ..DroSpec::default() },
        ] {
            assert!(matches!(generate_dro(&spec, &aif, &acq, 0), Err(Error::Spec(_))));
        }
    }
}
