//! Intensity to concentration through the inverted SPGR equation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{AcquisitionParams, TimeSeriesVolume, ValueKind};

/// Converts one series given its pre-contrast intensity `y0`. Scans before
/// `bat` are zero. Samples at or beyond the fully relaxed signal (`γ >= 1`,
/// where the log argument is not positive) are set to zero and counted.
pub fn series_to_concentration(
    series: &[f64],
    y0: f64,
    acq: &AcquisitionParams,
    t10_ms: f64,
    bat: usize,
    out: &mut [f64],
) -> usize {
    let a = acq.a(t10_ms);
    let b = acq.b(t10_ms);
    let d = acq.d();
    let scale = (1.0 - a) / ((1.0 - b) * y0);
    let mut clamped = 0;
    for (t, (o, &y)) in out.iter_mut().zip(series).enumerate() {
        if t < bat {
            *o = 0.0;
            continue;
        }
        let gamma = y * scale;
        // γ < 1 implies A - Bγ > 0, so the log argument is positive.
        if gamma < 1.0 && y0 > 0.0 {
            *o = ((1.0 - gamma) / (a - b * gamma)).ln() / d;
        } else {
            *o = 0.0;
            clamped += 1;
        }
    }
    clamped
}

/// Tissue (or blood, with the blood T10) concentration in mM. The baseline of
/// each voxel is the mean of scans `[0, bat)`.
pub fn intensity_to_concentration(
    volume: &TimeSeriesVolume,
    acq: &AcquisitionParams,
    t10_ms: f64,
    bat: usize,
) -> Result<(TimeSeriesVolume, usize)> {
    if volume.value_kind() != ValueKind::Intensity {
        return Err(Error::Argument(format!("expected intensities, got {:?}", volume.value_kind())));
    }
    if bat == 0 || bat > volume.n_time() {
        return Err(Error::Argument(format!("BAT {bat} leaves no pre-contrast scan")));
    }
    acq.validate()?;
    let n = volume.n_time();
    let mut data = vec![0.0; volume.data().len()];
    let clamped: usize = data
        .par_chunks_mut(n)
        .zip(volume.data().par_chunks(n))
        .map(|(out, s)| {
            let y0 = s[..bat].iter().sum::<f64>() / bat as f64;
            series_to_concentration(s, y0, acq, t10_ms, bat, out)
        })
        .sum();
    Ok((volume.with_data(ValueKind::Concentration, data)?, clamped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::spgr_signal;

    #[test]
    fn baseline_gives_zero() {
        let acq = AcquisitionParams::default();
        let mut out = [1.0; 4];
        let n = series_to_concentration(&[9.0; 4], 9.0, &acq, 1000.0, 1, &mut out);
        assert_eq!(n, 0);
        assert!(out.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn inverts_the_signal_equation() {
        let acq = AcquisitionParams::default();
        let cs = [0.0, 0.0, 0.01, 0.3, 1.2, 4.0, 0.7];
        for t10 in [acq.t10_tissue_ms, acq.t10_blood_ms] {
            let y: Vec<f64> = cs.iter().map(|&c| spgr_signal(500.0, c, &acq, t10)).collect();
            let mut out = [0.0; 7];
            series_to_concentration(&y, y[0], &acq, t10, 2, &mut out);
            for (c, o) in cs.iter().zip(&out) {
                assert!((c - o).abs() <= 1e-6 * c.max(1e-6), "{c} vs {o}");
            }
        }
    }

    #[test]
    fn blood_to_plasma_with_hematocrit() {
        let acq = AcquisitionParams::default();
        let cp = 3.0;
        let y = [spgr_signal(500.0, 0.0, &acq, 1440.0), spgr_signal(500.0, cp * (1.0 - acq.hct), &acq, 1440.0)];
        let mut out = [0.0; 2];
        series_to_concentration(&y, y[0], &acq, 1440.0, 1, &mut out);
        assert!((out[1] / (1.0 - acq.hct) - cp).abs() < 1e-9);
    }

    #[test]
    fn impossible_intensity_is_clamped() {
        let acq = AcquisitionParams::default();
        let mut out = [0.0; 2];
        // far above the fully relaxed signal
        let n = series_to_concentration(&[9.0, 1e6], 9.0, &acq, 1000.0, 1, &mut out);
        assert_eq!(n, 1);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn volume_conversion_needs_a_baseline() {
        let v = TimeSeriesVolume::new(vec![1, 1], 3, 1.0, ValueKind::Intensity, vec![9.0; 3]).unwrap();
        assert!(intensity_to_concentration(&v, &AcquisitionParams::default(), 1000.0, 0).is_err());
        let (c, n) = intensity_to_concentration(&v, &AcquisitionParams::default(), 1000.0, 1).unwrap();
        assert_eq!(n, 0);
        assert_eq!(c.value_kind(), ValueKind::Concentration);
    }
}
