//! Bolus arrival time from intensity curves.
//!
//! The series is smoothed with a centred 3-point mean and differenced. Before
//! the global peak the steepest step is found, and the rising edge is followed
//! back while the step stays above `gradient_fraction` of that maximum, then
//! over any raw scans already clearly above the baseline. The BAT is the last
//! baseline scan.
//! A voxel is invalid when its baseline is shorter than `min_baseline`, when
//! its peak rises less than `mad_factor` robust standard deviations above the
//! baseline, or when its steepest smoothed step is not significant at the
//! same factor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::TimeSeriesVolume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatConfig {
    pub gradient_fraction: f64,
    pub mad_factor: f64,
    /// Fewest scans before the edge for a usable baseline.
    pub min_baseline: usize,
}

impl Default for BatConfig {
    fn default() -> Self {
        Self { gradient_fraction: 0.2, mad_factor: 3.0, min_baseline: 3 }
    }
}

/// Arrival times over an ROI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatResult {
    /// One entry per ROI voxel, in ROI order; `None` when no onset was found.
    pub per_voxel_bat: Vec<Option<usize>>,
    /// Mean over valid voxels, in scans.
    pub roi_mean_bat: f64,
    /// Median over valid voxels, in scans.
    pub roi_median_bat: f64,
    pub valid_fraction: f64,
}

/// Which ROI summary of the per-voxel arrival times drives AIF alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatSummary {
    Mean,
    /// Robust to the late onsets detected in slowly enhancing voxels.
    #[default]
    Median,
}

impl BatResult {
    pub fn valid(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_voxel_bat.iter().flatten().copied()
    }

    pub fn summary(&self, which: BatSummary) -> f64 {
        match which {
            BatSummary::Mean => self.roi_mean_bat,
            BatSummary::Median => self.roi_median_bat,
        }
    }
}

fn smooth3(s: &[f64]) -> Vec<f64> {
    let n = s.len();
    (0..n)
        .map(|j| {
            let lo = j.saturating_sub(1);
            let hi = (j + 1).min(n - 1);
            s[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// BAT of a single series, or `None` when it shows no clear onset.
pub fn series_bat(series: &[f64], config: &BatConfig) -> Option<usize> {
    if series.len() < 3 {
        return None;
    }
    let sm = smooth3(series);
    let diff: Vec<f64> = sm.windows(2).map(|w| w[1] - w[0]).collect();
    let peak = sm.iter().enumerate().fold(0, |best, (j, v)| if *v > sm[best] { j } else { best });
    if peak == 0 {
        return None;
    }
    let steepest = (0..peak).fold(0, |best, j| if diff[j] > diff[best] { j } else { best });
    let max_step = diff[steepest];
    if max_step <= 0.0 {
        return None;
    }
    let mut start = steepest;
    while start > 0 && diff[start - 1] >= config.gradient_fraction * max_step {
        start -= 1;
    }
    if start + 1 < config.min_baseline {
        return None;
    }
    let baseline = &series[..=start];
    let centre = median(baseline.to_vec());
    let spread = 1.4826 * median(baseline.iter().map(|x| (x - centre).abs()).collect());
    // white noise of std s gives a 3-point-smoothed step of std s·√2/3
    let step_noise = spread * 2f64.sqrt() / 3.0;
    let rise = sm[peak] - centre;
    if rise <= 0.0 || rise < config.mad_factor * spread || max_step < config.mad_factor * step_noise {
        return None;
    }
    // The gradient cut can land a scan or two into the edge; walk back over
    // raw samples that already sit clearly above the baseline.
    let mut bat = start + 1;
    while bat > 1 && series[bat] > centre + config.mad_factor * spread {
        bat -= 1;
    }
    Some(bat)
}

pub fn estimate_bat(volume: &TimeSeriesVolume, roi: &[usize]) -> Result<BatResult> {
    estimate_bat_with(volume, roi, &BatConfig::default())
}

pub fn estimate_bat_with(volume: &TimeSeriesVolume, roi: &[usize], config: &BatConfig) -> Result<BatResult> {
    if volume.n_time() < 5 {
        return Err(Error::Argument(format!("BAT needs at least 5 scans, got {}", volume.n_time())));
    }
    if roi.is_empty() {
        return Err(Error::Argument("BAT ROI is empty".into()));
    }
    let per_voxel_bat: Vec<Option<usize>> = roi.par_iter().map(|&v| series_bat(volume.series(v), config)).collect();
    let valid: Vec<usize> = per_voxel_bat.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::NoSignal);
    }
    Ok(BatResult {
        roi_mean_bat: valid.iter().sum::<usize>() as f64 / valid.len() as f64,
        roi_median_bat: median(valid.iter().map(|&b| b as f64).collect()),
        valid_fraction: valid.len() as f64 / roi.len() as f64,
        per_voxel_bat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_dro, AifModel, DroSpec};
    use crate::volume::{AcquisitionParams, ValueKind};

    #[test]
    fn ramp_onset() {
        let s: Vec<f64> = (0..30).map(|j| if j <= 10 { 5.0 } else { 5.0 + 3.0 * (j - 10) as f64 }).collect();
        assert_eq!(series_bat(&s, &BatConfig::default()), Some(10));
    }

    #[test]
    fn flat_series_is_invalid() {
        assert_eq!(series_bat(&[4.0; 20], &BatConfig::default()), None);
        let vol = TimeSeriesVolume::new(vec![1, 2], 20, 1.0, ValueKind::Intensity, vec![4.0; 40]).unwrap();
        assert!(matches!(estimate_bat(&vol, &[0, 1]), Err(Error::NoSignal)));
    }

    #[test]
    fn noiseless_phantom_onset() {
        let spec = DroSpec { sigma_g: 0.0, ..DroSpec::default() };
        let dro = generate_dro(&spec, &AifModel::default(), &AcquisitionParams::default(), 0).unwrap();
        let roi = spec.tissue_roi();
        let bat = estimate_bat(&dro.noiseless, &roi).unwrap();
        assert!(bat.per_voxel_bat.iter().all(|&b| b == Some(10)));
        assert_eq!(bat.roi_mean_bat, 10.0);
        assert_eq!(bat.roi_median_bat, 10.0);
        assert_eq!(bat.valid_fraction, 1.0);
    }

    #[test]
    fn early_or_shallow_edges_are_invalid() {
        // edge right after the first scan: baseline too short
        let s: Vec<f64> = (0..30).map(|j| if j <= 1 { 5.0 } else { 5.0 + 3.0 * j as f64 }).collect();
        assert_eq!(series_bat(&s, &BatConfig::default()), None);
        assert_eq!(series_bat(&s, &BatConfig { min_baseline: 1, ..BatConfig::default() }), Some(1));
        // a slow drift of noise-sized steps is not an onset
        let noise = [0.9, -1.1, 0.4, -0.2, 1.3, -0.8, 0.1, -1.4, 0.7, -0.5];
        let drift: Vec<f64> = (0..40).map(|j| 10.0 + noise[j % 10] + 0.05 * j as f64).collect();
        assert_eq!(series_bat(&drift, &BatConfig::default()), None);
    }

    #[test]
    fn median_resists_late_outliers() {
        let ramp = |onset: usize| -> Vec<f64> {
            (0..30).map(|j| if j <= onset { 5.0 } else { 5.0 + 3.0 * (j - onset) as f64 }).collect()
        };
        let data: Vec<f64> = [10, 10, 10, 16].iter().flat_map(|&o| ramp(o)).collect();
        let vol = TimeSeriesVolume::new(vec![1, 4], 30, 1.0, ValueKind::Intensity, data).unwrap();
        let bat = estimate_bat(&vol, &[0, 1, 2, 3]).unwrap();
        assert_eq!(bat.summary(BatSummary::Mean), 11.5);
        assert_eq!(bat.summary(BatSummary::Median), 10.0);
    }

    #[test]
    fn short_series_is_rejected() {
        let vol = TimeSeriesVolume::zeros(vec![1, 1], 4, 1.0, ValueKind::Intensity).unwrap();
        assert!(estimate_bat(&vol, &[0]).is_err());
    }
}
