//! Temporo-spatial collaborative filtering on variance-stabilized data.
//!
//! One pass runs three primitives for every voxel taken as reference:
//!
//! * **gather** — candidates within a squared spatial radius `tau_dist` whose
//!   temporal DCT spectra lie within squared distance `zeta_sim` of the
//!   reference; at most `max_cluster` rows, closest first;
//! * **attenuate** — spatial DCT across the cluster rows, hard threshold, and
//!   per-row weights `‖H(u,:)‖² / ‖H‖²` applied to the unthresholded spectrum,
//!   then both inverse transforms;
//! * **reduce** — every voxel becomes the plain mean of all the cluster
//!   estimates it appeared in.
//!
//! Passes repeat until the spread of the removed residual stops changing.
//! From the second pass on, similarity is measured on the previous estimate
//! (a pilot) while the filtered rows are still taken from the input, so the
//! threshold keeps seeing noise of spread `sigma_v`.
//!
//! Output is bit-identical for any worker count: clusters are computed in
//! parallel but accumulated in reference order.

mod dct;
mod smooth;

pub use dct::Dct;
pub use smooth::gaussian_smooth;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{voxel_coords, TimeSeriesVolume, ValueKind};

/// Denoiser settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TscfConfig {
    /// Similarity threshold on squared spectral distance; when absent,
    /// `2 N sigma_v² zeta_scale` for series of length `N`.
    pub zeta_sim: Option<f64>,
    pub zeta_scale: f64,
    /// Squared spatial radius, in pixels².
    pub tau_dist: f64,
    pub max_cluster: usize,
    /// Threshold multiplier; the effective threshold is
    /// `tau_shrink sigma_v sqrt(2 ln(max_cluster N))`.
    pub tau_shrink: f64,
    pub max_iters: usize,
    pub stop_rel_tol: f64,
    pub sigma_v: f64,
    /// Gather on the previous estimate after the first pass.
    pub pilot_gather: bool,
}

impl Default for TscfConfig {
    fn default() -> Self {
        Self {
            zeta_sim: None,
            zeta_scale: 1.5,
            tau_dist: 400.0,
            max_cluster: 128,
            tau_shrink: 1.0,
            max_iters: 2,
            stop_rel_tol: 0.01,
            sigma_v: 1.0,
            pilot_gather: true,
        }
    }
}

impl TscfConfig {
    pub fn validate(&self) -> Result<()> {
        let zeta_ok = self.zeta_sim.is_none_or(|z| z > 0.0) && self.zeta_scale > 0.0;
        if !zeta_ok
            || !(self.tau_dist >= 0.0)
            || self.max_cluster == 0
            || !(self.tau_shrink >= 0.0)
            || self.max_iters == 0
            || !(self.stop_rel_tol >= 0.0)
            || !(self.sigma_v > 0.0)
        {
            return Err(Error::Argument(format!("invalid TSCF configuration {self:?}")));
        }
        Ok(())
    }

    pub fn effective_zeta(&self, n_time: usize) -> f64 {
        self.zeta_sim.unwrap_or(2.0 * n_time as f64 * self.sigma_v * self.sigma_v * self.zeta_scale)
    }

    pub fn effective_threshold(&self, n_time: usize) -> f64 {
        let mn = (self.max_cluster * n_time) as f64;
        self.tau_shrink * self.sigma_v * (2.0 * mn.ln().max(0.0)).sqrt()
    }
}

/// A reference voxel and the voxels gathered with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub reference: usize,
    /// Flat voxel indices; the reference comes first, the rest by
    /// increasing similarity distance, ties by index.
    pub members: Vec<usize>,
    /// Squared spectral distance of each member to the reference.
    pub similarity: Vec<f64>,
    /// `members.len() × n_time` temporal spectra, row-major.
    pub spectral_rows: Vec<f64>,
}

/// Denoised rows for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEstimate {
    pub members: Vec<usize>,
    /// `members.len() × n_time`, signal domain.
    pub rows: Vec<f64>,
    /// The thresholded spectrum was empty and the rows were zeroed.
    pub degenerate: bool,
}

/// What a denoising run did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TscfDiagnostics {
    pub iterations: usize,
    /// Std of `input - estimate` after each pass.
    pub residual_std: Vec<f64>,
    /// Clusters zeroed in the last pass.
    pub degenerate_clusters: usize,
    pub mean_cluster_size: f64,
    pub zeta_sim: f64,
    pub threshold: f64,
}

/// Orthonormal DCT-II of a series.
pub fn temporal_transform(series: &[f64]) -> Vec<f64> {
    Dct::new(series.len()).forward(series)
}

pub fn inverse_temporal_transform(spectrum: &[f64]) -> Vec<f64> {
    Dct::new(spectrum.len()).inverse(spectrum)
}

/// Temporal spectra of every voxel, laid out like the input raster.
pub fn volume_spectra(volume: &TimeSeriesVolume) -> TimeSeriesVolume {
    let dct = Dct::new(volume.n_time());
    let data = spectra_of(&dct, volume.data());
    volume.with_data(volume.value_kind(), data).expect("transform of a valid volume is valid")
}

fn spectra_of(dct: &Dct, data: &[f64]) -> Vec<f64> {
    let n = dct.len();
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(n).zip(data.par_chunks(n)).for_each(|(o, x)| dct.forward_into(x, o));
    out
}

struct Plan {
    dims: Vec<usize>,
    strides: Vec<usize>,
    n_time: usize,
    /// Coordinate offsets inside the search ball, the origin excluded.
    offsets: Vec<Vec<isize>>,
    zeta: f64,
    threshold: f64,
    max_cluster: usize,
    temporal: Dct,
    /// `spatial[m - 1]` has length `m`.
    spatial: Vec<Dct>,
}

impl Plan {
    fn new(dims: &[usize], n_time: usize, config: &TscfConfig) -> Self {
        let r = config.tau_dist.sqrt().floor() as isize;
        let side = (2 * r + 1) as usize;
        let offsets = (0..side.pow(dims.len() as u32))
            .map(|mut k| {
                let mut off = vec![0isize; dims.len()];
                for o in off.iter_mut().rev() {
                    *o = (k % side) as isize - r;
                    k /= side;
                }
                off
            })
            .filter(|off| {
                let d2: isize = off.iter().map(|o| o * o).sum();
                d2 > 0 && d2 as f64 <= config.tau_dist
            })
            .collect();
        let mut strides = vec![1; dims.len()];
        for a in (0..dims.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        Self {
            dims: dims.to_vec(),
            strides,
            n_time,
            offsets,
            zeta: config.effective_zeta(n_time),
            threshold: config.effective_threshold(n_time),
            max_cluster: config.max_cluster,
            temporal: Dct::new(n_time),
            spatial: (1..=config.max_cluster).map(Dct::new).collect(),
        }
    }

    fn neighbour(&self, coords: &[usize], offset: &[isize]) -> Option<usize> {
        let mut idx = 0;
        for a in 0..self.dims.len() {
            let c = coords[a] as isize + offset[a];
            if c < 0 || c >= self.dims[a] as isize {
                return None;
            }
            idx += c as usize * self.strides[a];
        }
        Some(idx)
    }

    fn gather(&self, similarity_spectra: &[f64], row_spectra: &[f64], reference: usize) -> Cluster {
        let n = self.n_time;
        let coords = voxel_coords(&self.dims, reference);
        let r = &similarity_spectra[reference * n..(reference + 1) * n];
        let mut found: Vec<(f64, usize)> = Vec::new();
        for off in &self.offsets {
            let Some(i) = self.neighbour(&coords, off) else { continue };
            let x = &similarity_spectra[i * n..(i + 1) * n];
            let mut s = 0.0;
            for (a, b) in r.iter().zip(x) {
                s += (a - b) * (a - b);
                if s > self.zeta {
                    break;
                }
            }
            if s <= self.zeta {
                found.push((s, i));
            }
        }
        found.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        found.truncate(self.max_cluster - 1);

        let mut members = Vec::with_capacity(found.len() + 1);
        let mut similarity = Vec::with_capacity(found.len() + 1);
        members.push(reference);
        similarity.push(0.0);
        for (s, i) in found {
            members.push(i);
            similarity.push(s);
        }
        let mut spectral_rows = Vec::with_capacity(members.len() * n);
        for &m in &members {
            spectral_rows.extend_from_slice(&row_spectra[m * n..(m + 1) * n]);
        }
        Cluster { reference, members, similarity, spectral_rows }
    }

    fn attenuate(&self, cluster: &Cluster) -> ClusterEstimate {
        let n = self.n_time;
        let m = cluster.members.len();
        let spatial = &self.spatial[m - 1];
        let mut s = vec![0.0; m * n];
        spatial.forward_columns(&cluster.spectral_rows, n, &mut s);

        let mut row_energy = vec![0.0; m];
        for (u, e) in row_energy.iter_mut().enumerate() {
            *e = s[u * n..(u + 1) * n].iter().filter(|v| v.abs() >= self.threshold).map(|v| v * v).sum();
        }
        let total: f64 = row_energy.iter().sum();
        let degenerate = total <= 0.0;
        for (u, e) in row_energy.iter().enumerate() {
            let w = if degenerate { 0.0 } else { e / total };
            s[u * n..(u + 1) * n].iter_mut().for_each(|v| *v *= w);
        }

        let mut spectra = vec![0.0; m * n];
        spatial.inverse_columns(&s, n, &mut spectra);
        let mut rows = vec![0.0; m * n];
        for (out, spec) in rows.chunks_mut(n).zip(spectra.chunks(n)) {
            self.temporal.inverse_into(spec, out);
        }
        ClusterEstimate { members: cluster.members.clone(), rows, degenerate }
    }
}

/// Gathers the cluster of `reference` from a volume of temporal spectra
/// (see [`volume_spectra`]).
pub fn gather(spectra: &TimeSeriesVolume, config: &TscfConfig, reference: usize) -> Cluster {
    let plan = Plan::new(spectra.dims(), spectra.n_time(), config);
    plan.gather(spectra.data(), spectra.data(), reference)
}

/// Collaborative filtering of one cluster; rows come back in the signal domain.
pub fn attenuate(cluster: &Cluster, config: &TscfConfig) -> ClusterEstimate {
    let m = cluster.members.len();
    assert!(m >= 1 && cluster.spectral_rows.len().is_multiple_of(m), "malformed cluster");
    let n = cluster.spectral_rows.len() / m;
    let config = TscfConfig { max_cluster: config.max_cluster.max(m), ..config.clone() };
    let plan = Plan::new(&[1], n, &config);
    plan.attenuate(cluster)
}

struct Accumulator {
    n_time: usize,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl Accumulator {
    fn new(n_voxels: usize, n_time: usize) -> Self {
        Self { n_time, sum: vec![0.0; n_voxels * n_time], count: vec![0; n_voxels] }
    }

    fn add(&mut self, est: &ClusterEstimate) {
        let n = self.n_time;
        for (row, &v) in est.rows.chunks(n).zip(&est.members) {
            for (s, x) in self.sum[v * n..(v + 1) * n].iter_mut().zip(row) {
                *s += x;
            }
            self.count[v] += 1;
        }
    }

    fn finish(mut self) -> Result<Vec<f64>> {
        let n = self.n_time;
        for (v, &c) in self.count.iter().enumerate() {
            if c == 0 {
                return Err(Error::Data(format!("voxel {v} belongs to no cluster")));
            }
            let inv = 1.0 / c as f64;
            self.sum[v * n..(v + 1) * n].iter_mut().for_each(|s| *s *= inv);
        }
        Ok(self.sum)
    }
}

/// Averages cluster estimates per voxel, summing in the given order.
pub fn reduce(
    estimates: &[ClusterEstimate],
    dims: &[usize],
    n_time: usize,
    dt_seconds: f64,
    value_kind: ValueKind,
) -> Result<TimeSeriesVolume> {
    let n_voxels = dims.iter().product();
    let mut acc = Accumulator::new(n_voxels, n_time);
    for e in estimates {
        acc.add(e);
    }
    TimeSeriesVolume::new(dims.to_vec(), n_time, dt_seconds, value_kind, acc.finish()?)
}

const CHUNK: usize = 256;

fn one_pass(plan: &Plan, similarity: &[f64], rows: &[f64], n_voxels: usize) -> Result<(Vec<f64>, usize, f64)> {
    let mut acc = Accumulator::new(n_voxels, plan.n_time);
    let mut degenerate = 0;
    let mut members = 0usize;
    let refs: Vec<usize> = (0..n_voxels).collect();
    for chunk in refs.chunks(CHUNK) {
        let estimates: Vec<ClusterEstimate> =
            chunk.par_iter().map(|&r| plan.attenuate(&plan.gather(similarity, rows, r))).collect();
        for e in &estimates {
            degenerate += e.degenerate as usize;
            members += e.members.len();
            acc.add(e);
        }
    }
    Ok((acc.finish()?, degenerate, members as f64 / n_voxels as f64))
}

fn residual_std(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mean = a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / n;
    (a.iter().zip(b).map(|(x, y)| (x - y - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Denoises a stabilized volume.
pub fn tscf_denoise(volume: &TimeSeriesVolume, config: &TscfConfig) -> Result<(TimeSeriesVolume, TscfDiagnostics)> {
    if volume.value_kind() != ValueKind::Stabilized {
        return Err(Error::Argument(format!("TSCF expects stabilized data, got {:?}", volume.value_kind())));
    }
    config.validate()?;
    let n = volume.n_time();
    let plan = Plan::new(volume.dims(), n, config);
    let rows = spectra_of(&plan.temporal, volume.data());

    let mut diag = TscfDiagnostics { zeta_sim: plan.zeta, threshold: plan.threshold, ..Default::default() };
    let mut similarity: Option<Vec<f64>> = None;
    let mut estimate = Vec::new();
    for it in 1..=config.max_iters {
        let sim = similarity.as_deref().unwrap_or(&rows);
        let (est, degenerate, mean_size) = one_pass(&plan, sim, &rows, volume.n_voxels())?;
        estimate = est;
        let r = residual_std(volume.data(), &estimate);
        diag.iterations = it;
        diag.degenerate_clusters = degenerate;
        diag.mean_cluster_size = mean_size;
        let prev = diag.residual_std.last().copied();
        diag.residual_std.push(r);
        if let Some(p) = prev {
            if p > 0.0 && ((r - p) / p).abs() < config.stop_rel_tol {
                break;
            }
        }
        if it < config.max_iters && config.pilot_gather {
            similarity = Some(spectra_of(&plan.temporal, &estimate));
        }
    }
    Ok((volume.with_data(ValueKind::Stabilized, estimate)?, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_dro, AifModel, DroSpec};
    use crate::volume::AcquisitionParams;
    use crate::vst::{apply_vst, build_stabilizer};

    fn stabilized_dro(sigma: f64) -> (TimeSeriesVolume, TimeSeriesVolume, DroSpec) {
        let spec = DroSpec { sigma_g: sigma, ..DroSpec::default() };
        let dro = generate_dro(&spec, &AifModel::default(), &AcquisitionParams::default(), 9).unwrap();
        let stab = build_stabilizer(5.0).unwrap();
        let clean = apply_vst(&dro.noiseless, &stab).unwrap();
        let noisy = apply_vst(&dro.noisy, &stab).unwrap();
        (clean, noisy, spec)
    }

    fn energy(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn temporal_transform_is_orthonormal() {
        let x: Vec<f64> = (0..61).map(|i| ((i * 37) % 11) as f64 - 4.3).collect();
        let c = temporal_transform(&x);
        assert!((energy(&x) - energy(&c)).abs() < 1e-10 * energy(&x));
        let back = inverse_temporal_transform(&c);
        assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-10));
        let c = temporal_transform(&[3.0; 8]);
        assert!((c[0] - 3.0 * 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn spatial_transform_preserves_energy() {
        let d = Dct::new(5);
        let m: Vec<f64> = (0..5 * 7).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut out = vec![0.0; 35];
        d.forward_columns(&m, 7, &mut out);
        assert!((energy(&m) - energy(&out)).abs() < 1e-10);
    }

    #[test]
    fn phantom_energy_is_low_frequency() {
        let (clean, _, spec) = stabilized_dro(0.0);
        let keep = 61usize.div_ceil(10);
        for v in spec.tissue_roi().into_iter().step_by(97) {
            let c = temporal_transform(clean.series(v));
            let low = energy(&c[..keep]);
            assert!(low > 0.95 * energy(&c), "voxel {v}");
        }
    }

    fn small_volume(f: impl FnMut(usize, usize) -> f64) -> TimeSeriesVolume {
        TimeSeriesVolume::from_fn(vec![6, 6], 4, 1.0, ValueKind::Stabilized, f).unwrap()
    }

    #[test]
    fn identical_voxels_cluster_together() {
        let vol = small_volume(|v, t| if v == 0 || v == 1 { 2.0 + t as f64 } else { 50.0 * v as f64 });
        let c = gather(&volume_spectra(&vol), &TscfConfig::default(), 0);
        assert_eq!(c.members, vec![0, 1]);
        assert_eq!(c.similarity, vec![0.0, 0.0]);
        assert_eq!(c.spectral_rows.len(), 8);
    }

    #[test]
    fn spatial_radius_is_respected() {
        let vol = small_volume(|_, t| t as f64);
        let spectra = volume_spectra(&vol);
        let far = vol.voxel_index(&[3, 4]);
        let cfg = TscfConfig { tau_dist: 24.0, max_cluster: 64, ..TscfConfig::default() };
        assert!(!gather(&spectra, &cfg, 0).members.contains(&far));
        let cfg = TscfConfig { tau_dist: 25.0, max_cluster: 64, ..TscfConfig::default() };
        assert!(gather(&spectra, &cfg, 0).members.contains(&far));
    }

    #[test]
    fn cluster_size_is_capped_with_ordered_ties() {
        let vol = small_volume(|_, t| t as f64);
        let cfg = TscfConfig { max_cluster: 4, ..TscfConfig::default() };
        let c = gather(&volume_spectra(&vol), &cfg, 7);
        assert_eq!(c.members, vec![7, 0, 1, 2]);
    }

    #[test]
    fn noiseless_clusters_stay_in_their_block() {
        let (clean, _, spec) = stabilized_dro(0.0);
        let spectra = volume_spectra(&clean);
        let cfg = TscfConfig { zeta_sim: Some(0.05), ..TscfConfig::default() };
        let (mut foreign, mut total) = (0usize, 0usize);
        for r in spec.tissue_roi().into_iter().step_by(7) {
            let c = gather(&spectra, &cfg, r);
            let home = spec.block_of(r);
            foreign += c.members.iter().filter(|&&m| spec.block_of(m) != home).count();
            total += c.members.len();
        }
        assert!((foreign as f64) < 0.05 * total as f64, "{foreign}/{total}");
    }

    #[test]
    fn single_row_passes_through() {
        let rows = vec![9.0, -7.0, 8.0];
        let cluster = Cluster { reference: 0, members: vec![0], similarity: vec![0.0], spectral_rows: rows.clone() };
        let cfg = TscfConfig { tau_shrink: 0.0, ..TscfConfig::default() };
        let est = attenuate(&cluster, &cfg);
        let expect = inverse_temporal_transform(&rows);
        assert!(est.rows.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(!est.degenerate);
    }

    #[test]
    fn all_below_threshold_gives_zero() {
        let cluster = Cluster {
            reference: 0,
            members: vec![0, 1],
            similarity: vec![0.0, 0.1],
            spectral_rows: vec![0.1, -0.2, 0.05, 0.3],
        };
        let est = attenuate(&cluster, &TscfConfig::default());
        assert!(est.degenerate);
        assert!(est.rows.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attenuation_reduces_cluster_error() {
        let (clean, noisy, _) = stabilized_dro(5.0);
        let cfg = TscfConfig::default();
        let plan = Plan::new(noisy.dims(), noisy.n_time(), &cfg);
        let noisy_spec = spectra_of(&plan.temporal, noisy.data());
        let (mut before, mut after) = (0.0, 0.0);
        for k in 0..100 {
            let r = (k * 7919) % noisy.n_voxels();
            let est = plan.attenuate(&plan.gather(&noisy_spec, &noisy_spec, r));
            for (row, &m) in est.rows.chunks(61).zip(&est.members) {
                let truth = clean.series(m);
                before += truth.iter().zip(noisy.series(m)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                after += truth.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
        }
        assert!(after < before, "{after} vs {before}");
    }

    fn estimate(members: Vec<usize>, rows: Vec<f64>) -> ClusterEstimate {
        ClusterEstimate { members, rows, degenerate: false }
    }

    #[test]
    fn reduce_averages() {
        let est = [estimate(vec![0, 1], vec![1.0, 2.0, 3.0, 4.0]), estimate(vec![1], vec![5.0, 8.0])];
        let out = reduce(&est, &[1, 2], 2, 1.0, ValueKind::Stabilized).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 4.0, 6.0]);
        let missing = reduce(&est[1..], &[1, 2], 2, 1.0, ValueKind::Stabilized);
        assert!(missing.is_err());
    }

    #[test]
    fn reduce_of_inputs_is_identity() {
        let vol = small_volume(|v, t| (v * 3 + t) as f64 * 0.7);
        let spectra = volume_spectra(&vol);
        let cfg = TscfConfig::default();
        let ests: Vec<ClusterEstimate> = (0..vol.n_voxels())
            .map(|r| {
                let c = gather(&spectra, &cfg, r);
                let rows = c.members.iter().flat_map(|&m| vol.series(m).to_vec()).collect();
                estimate(c.members, rows)
            })
            .collect();
        let out = reduce(&ests, vol.dims(), 4, 1.0, ValueKind::Stabilized).unwrap();
        assert_eq!(out, vol);
    }

    #[test]
    fn clean_input_is_a_fixed_point() {
        let (clean, _, _) = stabilized_dro(0.0);
        let cfg = TscfConfig { sigma_v: 1e-3, tau_shrink: 1e-3, ..TscfConfig::default() };
        let (out, _) = tscf_denoise(&clean, &cfg).unwrap();
        let err = out.data().iter().zip(clean.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        assert!((err / energy(clean.data())).sqrt() < 1e-3);
    }

    #[test]
    fn denoising_halves_the_error_and_converges() {
        let (clean, noisy, _) = stabilized_dro(5.0);
        let mse = |v: &TimeSeriesVolume| {
            v.data().iter().zip(clean.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / v.data().len() as f64
        };
        let one = TscfConfig { max_iters: 1, ..TscfConfig::default() };
        let (first, _) = tscf_denoise(&noisy, &one).unwrap();
        let (second, diag) = tscf_denoise(&noisy, &TscfConfig { stop_rel_tol: 0.0, ..TscfConfig::default() }).unwrap();
        assert!(mse(&first) < 0.5 * mse(&noisy), "{} vs {}", mse(&first), mse(&noisy));
        assert!(mse(&second) < 0.5 * mse(&noisy));
        assert_eq!(diag.iterations, 2);
        let change1 = residual_std(noisy.data(), first.data());
        let change2 = residual_std(first.data(), second.data());
        assert!(change2 < change1, "{change2} vs {change1}");
    }

    #[test]
    fn output_is_independent_of_thread_count() {
        let (_, noisy, _) = stabilized_dro(5.0);
        let cfg = TscfConfig::default();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| tscf_denoise(&noisy, &cfg).unwrap());
        let b = four.install(|| tscf_denoise(&noisy, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn intensity_input_is_rejected() {
        let vol = TimeSeriesVolume::zeros(vec![2, 2], 3, 1.0, ValueKind::Intensity).unwrap();
        assert!(tscf_denoise(&vol, &TscfConfig::default()).is_err());
    }
}
