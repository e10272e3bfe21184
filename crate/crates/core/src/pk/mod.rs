//! Pharmacokinetic estimation with the standard Tofts model.
//!
//! [`fit_volume`] runs the concentration-domain pipeline: arrival time on the
//! intensities, AIF alignment and decimation to the scan grid, conversion of
//! tissue (and, if needed, blood) intensity to concentration, then a bounded
//! least-squares fit per voxel.

mod bat;
mod convert;
mod fit;
mod horsfield;

pub use bat::{estimate_bat, estimate_bat_with, series_bat, BatConfig, BatResult, BatSummary};
pub use convert::{intensity_to_concentration, series_to_concentration};
pub use fit::{cost_and_gradient, fit_voxel, fit_voxel_seeded, VoxelFit};
pub use horsfield::{horsfield_forward, horsfield_with_sensitivities};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::debias_magnitude;
use crate::volume::{AcquisitionParams, AifKind, AifSeries, ParamMap, TimeSeriesVolume, ValueKind};

/// How an oversampled AIF is brought to the scan grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AifDecimation {
    /// Take the fine sample at each scan time.
    Sample,
    /// Mean over the `f + 1` fine samples centred on each scan time, the two
    /// end samples at half weight.
    BlockMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// min⁻¹
    pub ktrans_bounds: (f64, f64),
    pub ve_bounds: (f64, f64),
    pub n_starts: usize,
    pub max_lbfgs_iters: usize,
    pub grad_tol: f64,
    /// Stop when an iteration lowers the cost by less than this, relative to
    /// `max(1, cost)`.
    pub cost_tol: f64,
    pub history_size: usize,
    /// Seed of the random starts; voxel `v` uses stream `v`.
    pub seed: u64,
    pub bat: BatConfig,
    /// ROI arrival time used to place the AIF and the tissue baseline.
    pub bat_summary: BatSummary,
    pub aif_decimation: AifDecimation,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            ktrans_bounds: (1e-4, 1.0),
            ve_bounds: (1e-3, 1.0),
            n_starts: 4,
            max_lbfgs_iters: 200,
            grad_tol: 1e-10,
            cost_tol: 1e-14,
            history_size: 5,
            seed: 0,
            bat: BatConfig::default(),
            bat_summary: BatSummary::default(),
            aif_decimation: AifDecimation::Sample,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let (klo, khi) = self.ktrans_bounds;
        let (vlo, vhi) = self.ve_bounds;
        if !(0.0 < klo && klo < khi && khi.is_finite()) || !(0.0 < vlo && vlo < vhi && vhi <= 1.0) {
            return Err(Error::Argument(format!(
                "fit bounds must satisfy 0 < lo < hi (ve hi <= 1): {:?} {:?}",
                self.ktrans_bounds, self.ve_bounds
            )));
        }
        if self.n_starts == 0 || self.max_lbfgs_iters == 0 || self.history_size == 0 {
            return Err(Error::Argument("n_starts, max_lbfgs_iters and history_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Arterial curve as a blood-intensity series on the scan grid: the ROI mean
/// per scan, corrected for the Rician bias when `sigma_g > 0`.
pub fn aif_from_roi(volume: &TimeSeriesVolume, roi: &[usize], sigma_g: f64) -> Result<AifSeries> {
    if roi.is_empty() {
        return Err(Error::Argument("AIF ROI is empty".into()));
    }
    let values = (0..volume.n_time())
        .map(|t| {
            let mean = roi.iter().map(|&v| volume.get(v, t)).sum::<f64>() / roi.len() as f64;
            if sigma_g > 0.0 {
                debias_magnitude(mean, sigma_g)
            } else {
                mean
            }
        })
        .collect();
    AifSeries::new(volume.times(), values, AifKind::BloodIntensity, 1)
}

/// Shifts the AIF so that its own arrival lands on the tissue arrival, then
/// decimates it to `n_time` scans. Returns the values and the shift in fine
/// samples.
pub fn align_aif(aif: &AifSeries, roi_bat: f64, n_time: usize, config: &FitConfig) -> Result<(Vec<f64>, isize)> {
    aif.check_covers(n_time)?;
    let f = aif.upsample_factor();
    let values = aif.values();
    let own = series_bat(values, &config.bat);
    let shift = match own {
        Some(b) => (f as f64 * roi_bat).round() as isize - b as isize,
        None => 0,
    };
    let last = values.len() as isize - 1;
    let at = |k: isize| values[(k - shift).clamp(0, last) as usize];
    let out = (0..n_time)
        .map(|j| {
            let c = (j * f) as isize;
            match config.aif_decimation {
                AifDecimation::Sample => at(c),
                AifDecimation::BlockMean if f == 1 => at(c),
                AifDecimation::BlockMean => {
                    let h = (f / 2) as isize;
                    let mut acc = 0.0;
                    let mut w = 0.0;
                    for k in -h..=h {
                        let wk = if f.is_multiple_of(2) && k.abs() == h { 0.5 } else { 1.0 };
                        acc += wk * at(c + k);
                        w += wk;
                    }
                    acc / w
                }
            }
        })
        .collect();
    Ok((out, shift))
}

/// Converts aligned AIF samples to plasma concentration. `bat` bounds the
/// baseline used for intensity input. Returns the count of clamped samples.
pub fn aif_to_plasma(values: &[f64], kind: AifKind, acq: &AcquisitionParams, bat: usize) -> (Vec<f64>, usize) {
    match kind {
        AifKind::PlasmaConcentration => (values.to_vec(), 0),
        AifKind::BloodConcentration => (values.iter().map(|c| c / (1.0 - acq.hct)).collect(), 0),
        AifKind::BloodIntensity => {
            let y0 = values[..bat].iter().sum::<f64>() / bat as f64;
            let mut out = vec![0.0; values.len()];
            let clamped = series_to_concentration(values, y0, acq, acq.t10_blood_ms, bat, &mut out);
            out.iter_mut().for_each(|c| *c /= 1.0 - acq.hct);
            (out, clamped)
        }
    }
}

/// Output of [`fit_volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFit {
    /// Voxels outside the ROI are zero and not converged.
    pub params: ParamMap,
    pub bat: BatResult,
    /// AIF shift in fine samples.
    pub aif_shift: isize,
    /// Plasma concentration used for fitting, on the scan grid.
    pub plasma: Vec<f64>,
    /// Samples clamped during intensity to concentration conversion.
    pub clamped: usize,
}

/// Concentration-domain Tofts fit of every ROI voxel.
pub fn fit_volume(
    volume: &TimeSeriesVolume,
    aif: &AifSeries,
    acq: &AcquisitionParams,
    roi: &[usize],
    config: &FitConfig,
) -> Result<VolumeFit> {
    if volume.value_kind() != ValueKind::Intensity {
        return Err(Error::Argument(format!("fit_volume expects intensities, got {:?}", volume.value_kind())));
    }
    config.validate()?;
    acq.validate()?;
    if let Some(&bad) = roi.iter().find(|&&v| v >= volume.n_voxels()) {
        return Err(Error::Argument(format!("ROI voxel {bad} outside volume")));
    }
    let n = volume.n_time();
    let bat = estimate_bat_with(volume, roi, &config.bat)?;
    let roi_bat = bat.summary(config.bat_summary);
    let scan_bat = (roi_bat.round() as usize).clamp(1, n - 1);

    let (aligned, aif_shift) = align_aif(aif, roi_bat, n, config)?;
    let (plasma, aif_clamped) = aif_to_plasma(&aligned, aif.kind(), acq, scan_bat);

    let dt = volume.dt_seconds();
    let t10 = acq.t10_tissue_ms;
    let fits: Vec<(VoxelFit, usize)> = roi
        .par_iter()
        .map(|&v| {
            let s = volume.series(v);
            let y0 = s[..scan_bat].iter().sum::<f64>() / scan_bat as f64;
            let mut ct = vec![0.0; n];
            let clamped = series_to_concentration(s, y0, acq, t10, scan_bat, &mut ct);
            (fit_voxel_seeded(&ct, &plasma, dt, config, v as u64), clamped)
        })
        .collect();

    let mut params = ParamMap::empty(volume.dims().to_vec());
    let mut clamped = aif_clamped;
    for ((&v, (fit, c)), b) in roi.iter().zip(&fits).zip(&bat.per_voxel_bat) {
        params.set(v, fit.ktrans, fit.ve, fit.residual, fit.converged);
        params.bat_index[v] = *b;
        clamped += c;
    }
    Ok(VolumeFit { params, bat, aif_shift, plasma, clamped })
}
