//! Scores for parameter maps and arrival-time consistency.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pk::BatResult;

/// `sqrt(mean((x̂ - x)²)) / (max x - min x)` over `roi`.
pub fn nrmse(estimate: &[f64], truth: &[f64], roi: &[usize]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Argument(format!("map sizes differ: {} vs {}", estimate.len(), truth.len())));
    }
    if roi.is_empty() {
        return Err(Error::Argument("NRMSE ROI is empty".into()));
    }
    let (mut lo, mut hi, mut sq) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &i in roi {
        let x = *truth.get(i).ok_or_else(|| Error::Argument(format!("ROI index {i} out of range")))?;
        lo = lo.min(x);
        hi = hi.max(x);
        sq += (estimate[i] - x).powi(2);
    }
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Argument("truth is constant over the ROI; NRMSE is undefined".into()));
    }
    Ok((sq / roi.len() as f64).sqrt() / range)
}

const WINDOW: usize = 8;

/// Mean SSIM over every 8×8 window of two `rows × cols` maps, with
/// `C1 = (0.01 L)²`, `C2 = (0.03 L)²` and sample (co)variances.
pub fn mssim(a: &[f64], b: &[f64], rows: usize, cols: usize, data_range: f64) -> Result<f64> {
    if a.len() != rows * cols || b.len() != rows * cols {
        return Err(Error::Argument(format!("maps must be {rows}×{cols}")));
    }
    if rows < WINDOW || cols < WINDOW {
        return Err(Error::Argument(format!("maps must be at least {WINDOW}×{WINDOW}, got {rows}×{cols}")));
    }
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::Argument(format!("data range must be > 0, got {data_range}")));
    }
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let n = (WINDOW * WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=rows - WINDOW {
        for c in 0..=cols - WINDOW {
            let idx = |i: usize| (r + i / WINDOW) * cols + c + i % WINDOW;
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..WINDOW * WINDOW {
                ma += a[idx(i)];
                mb += b[idx(i)];
            }
            ma /= n;
            mb /= n;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..WINDOW * WINDOW {
                let (da, db) = (a[idx(i)] - ma, b[idx(i)] - mb);
                va += da * da;
                vb += db * db;
                cov += da * db;
            }
            va /= n - 1.0;
            vb /= n - 1.0;
            cov /= n - 1.0;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Sample standard deviation of the valid arrival times, in scans.
pub fn bat_dispersion(bat: &BatResult) -> Result<f64> {
    let v: Vec<f64> = bat.valid().map(|b| b as f64).collect();
    if v.len() < 2 {
        return Err(Error::InsufficientData(format!("{} valid arrival times, need 2", v.len())));
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    Ok((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Concordance of a scalar feature with binary labels (Mann–Whitney AUC),
/// ties counting one half.
pub fn c_statistic(feature: &[f64], labels: &[bool]) -> Result<f64> {
    if feature.len() != labels.len() {
        return Err(Error::Argument("feature and labels differ in length".into()));
    }
    let pos: Vec<f64> = feature.iter().zip(labels).filter(|p| *p.1).map(|p| *p.0).collect();
    let neg: Vec<f64> = feature.iter().zip(labels).filter(|p| !*p.1).map(|p| *p.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Argument("c-statistic needs both classes".into()));
    }
    let mut score = 0.0;
    for p in &pos {
        for q in &neg {
            score += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(score / (pos.len() * neg.len()) as f64)
}

/// Scores of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub nrmse_ktrans: f64,
    pub nrmse_ve: f64,
    pub mssim_ktrans: f64,
    pub mssim_ve: f64,
    /// Arrival-time spread over the tissue ROI, scans.
    pub bat_std: f64,
    pub bat_valid_fraction: f64,
    pub sigma_g_hat: f64,
    pub convergence_rate: f64,
    pub config_hash: String,
    /// Wall-clock seconds per stage; the only field that varies between
    /// otherwise identical runs.
    pub runtime_s: BTreeMap<String, f64>,
}

impl EvalReport {
    /// Everything but the timings.
    pub fn same_values(&self, other: &Self) -> bool {
        Self { runtime_s: BTreeMap::new(), ..self.clone() } == Self { runtime_s: BTreeMap::new(), ..other.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nrmse_examples() {
        let truth = [0.0, 1.0, 2.0, 4.0];
        let roi = [0, 1, 2, 3];
        assert_eq!(nrmse(&truth, &truth, &roi).unwrap(), 0.0);
        let shifted: Vec<f64> = truth.iter().map(|x| x + 0.5).collect();
        assert!((nrmse(&shifted, &truth, &roi).unwrap() - 0.125).abs() < 1e-15);
        assert!(nrmse(&truth, &[3.0; 4], &roi).is_err());
    }

    #[test]
    fn mssim_examples() {
        let a: Vec<f64> = (0..100).map(|i| ((i * 7) % 13) as f64).collect();
        assert_eq!(mssim(&a, &a, 10, 10, 12.0).unwrap(), 1.0);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        let centred: Vec<f64> = a.iter().map(|x| x - 6.0).collect();
        let flipped: Vec<f64> = centred.iter().map(|x| -x).collect();
        assert!(mssim(&flipped, &centred, 10, 10, 12.0).unwrap() < 0.0);
        assert!(mssim(&neg, &a, 10, 10, 12.0).unwrap() < 1.0);
        assert!(mssim(&a[..49], &a[..49], 7, 7, 1.0).is_err());
    }

    fn bats(v: &[Option<usize>]) -> BatResult {
        BatResult { per_voxel_bat: v.to_vec(), roi_mean_bat: 0.0, roi_median_bat: 0.0, valid_fraction: 1.0 }
    }

    #[test]
    fn dispersion_examples() {
        assert_eq!(bat_dispersion(&bats(&[Some(10), Some(10), None])).unwrap(), 0.0);
        assert!((bat_dispersion(&bats(&[Some(10), Some(12)])).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(bat_dispersion(&bats(&[Some(3), None])), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn c_statistic_examples() {
        let f = [3.0, 4.0, 5.0, 1.0, 2.0];
        let l = [true, true, true, false, false];
        assert_eq!(c_statistic(&f, &l).unwrap(), 1.0);
        assert_eq!(c_statistic(&[2.0; 5], &l).unwrap(), 0.5);
        assert!(c_statistic(&f, &[true; 5]).is_err());
    }

    fn map(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn nrmse_translation_and_scale(a in map(30), x in map(30), c in -50.0f64..50.0, k in 0.01f64..100.0) {
            let roi: Vec<usize> = (0..30).collect();
            prop_assume!(nrmse(&a, &x, &roi).is_ok());
            let base = nrmse(&a, &x, &roi).unwrap();
            let ac: Vec<f64> = a.iter().map(|v| v + c).collect();
            let xc: Vec<f64> = x.iter().map(|v| v + c).collect();
            prop_assert!((nrmse(&ac, &xc, &roi).unwrap() - base).abs() <= 1e-9 * (1.0 + base));
            let ak: Vec<f64> = a.iter().map(|v| v * k).collect();
            let xk: Vec<f64> = x.iter().map(|v| v * k).collect();
            prop_assert!((nrmse(&ak, &xk, &roi).unwrap() - base).abs() <= 1e-9 * (1.0 + base));
            prop_assert_eq!(nrmse(&x, &x, &roi).unwrap(), 0.0);
        }

        #[test]
        fn mssim_symmetry_and_identity(a in map(120), b in map(120), l in 0.1f64..30.0) {
            let ab = mssim(&a, &b, 10, 12, l).unwrap();
            let ba = mssim(&b, &a, 10, 12, l).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!(ab <= 1.0 + 1e-12);
            prop_assert_eq!(mssim(&a, &a, 10, 12, l).unwrap(), 1.0);
        }

        #[test]
        fn c_statistic_is_rank_invariant(f in map(12), l in prop::collection::vec(any::<bool>(), 12)) {
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let c = c_statistic(&f, &l).unwrap();
            let g: Vec<f64> = f.iter().map(|x| x.powi(3) * 2.0 + 7.0).collect();
            prop_assert_eq!(c_statistic(&g, &l).unwrap(), c);
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }
}
