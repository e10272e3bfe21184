//! Spatial Gaussian smoothing, the conventional baseline denoiser.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::TimeSeriesVolume;

/// Symmetric reflection (`d c b a | a b c d | d c b a`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn kernel(fwhm: f64) -> Vec<f64> {
    let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    let r = (4.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-r..=r).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Separable Gaussian blur of every frame, FWHM in pixels, applied along all
/// spatial axes with reflected borders. The kernel is cut at 4σ and
/// renormalized.
pub fn gaussian_smooth(volume: &TimeSeriesVolume, fwhm_px: f64) -> Result<TimeSeriesVolume> {
    if !(fwhm_px > 0.0 && fwhm_px.is_finite()) {
        return Err(Error::Argument(format!("FWHM must be > 0, got {fwhm_px}")));
    }
    let w = kernel(fwhm_px);
    let r = (w.len() / 2) as isize;
    let dims = volume.dims().to_vec();
    let n = volume.n_time();
    let mut data = volume.data().to_vec();
    let mut strides = vec![n; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    for axis in 0..dims.len() {
        let (len, stride) = (dims[axis], strides[axis]);
        let src = data.clone();
        data.par_chunks_mut(n).enumerate().for_each(|(v, out)| {
            let pos = (v * n / stride) % len;
            let base = v * n - pos * stride;
            out.iter_mut().for_each(|o| *o = 0.0);
            for (k, wk) in w.iter().enumerate() {
                let p = reflect(pos as isize + k as isize - r, len);
                let s = &src[base + p * stride..base + p * stride + n];
                for (o, x) in out.iter_mut().zip(s) {
                    *o += wk * x;
                }
            }
        });
    }
    volume.with_data(volume.value_kind(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::ValueKind;

    #[test]
    fn reflection() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn constant_is_unchanged() {
        let v = TimeSeriesVolume::new(vec![5, 4], 3, 1.0, ValueKind::Intensity, vec![7.25; 60]).unwrap();
        let s = gaussian_smooth(&v, 1.5).unwrap();
        assert!(s.data().iter().all(|x| (x - 7.25).abs() < 1e-12));
    }

    #[test]
    fn delta_gives_the_kernel() {
        let w = kernel(1.5);
        let r = w.len() / 2;
        let side = 2 * r + 3;
        let centre = side / 2;
        let v = TimeSeriesVolume::from_fn(vec![side, side], 1, 1.0, ValueKind::Intensity, |v, _| {
            if v == centre * side + centre {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let s = gaussian_smooth(&v, 1.5).unwrap();
        for i in 0..side {
            for j in 0..side {
                let expect = if i.abs_diff(centre) <= r && j.abs_diff(centre) <= r {
                    w[i + r - centre] * w[j + r - centre]
                } else {
                    0.0
                };
                assert!((s.get(i * side + j, 0) - expect).abs() < 1e-15);
            }
        }
        assert!((s.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frames_are_independent() {
        let v =
            TimeSeriesVolume::from_fn(vec![6, 6], 2, 1.0, ValueKind::Intensity, |v, t| (v * (t + 1)) as f64).unwrap();
        let s = gaussian_smooth(&v, 2.0).unwrap();
        for v in 0..36 {
            assert!((s.get(v, 1) - 2.0 * s.get(v, 0)).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_width_is_rejected() {
        let v = TimeSeriesVolume::zeros(vec![2, 2], 1, 1.0, ValueKind::Intensity).unwrap();
        assert!(gaussian_smooth(&v, 0.0).is_err());
    }
}
