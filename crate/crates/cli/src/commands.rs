//! Subcommand bodies. Each one runs inside a worker pool sized by
//! `RunConfig::threads` and writes a manifest into the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tscf_core::metrics::{bat_dispersion, mssim, nrmse, EvalReport};
use tscf_core::noise::{estimate_noise_dual, RicianStats};
use tscf_core::phantom::{add_rician_noise, generate_dro, DroSpec};
use tscf_core::pk::{aif_from_roi, fit_volume, VolumeFit};
use tscf_core::tscf::{gaussian_smooth, tscf_denoise, TscfDiagnostics};
use tscf_core::volume::{read_aif, read_param_map, read_volume, write_aif, write_param_map, write_volume};
use tscf_core::{vst, Error, ParamMap, TimeSeriesVolume};

use crate::config::{Manifest, Method, RunConfig};
use crate::error::{CliError, Stage, StageExt};

type CliResult<T> = Result<T, CliError>;

/// Runs `f` on a dedicated pool of `threads` workers (all cores when 0).
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::new(Stage::Config, Error::Argument(format!("cannot start {threads} threads: {e}"))))?;
    pool.install(f)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(Stage::Output, dir, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut json = serde_json::to_string_pretty(value).expect("report serializes");
    json.push('\n');
    fs::write(path, json).map_err(|e| CliError::io(Stage::Output, path, e))
}

fn write_manifest(command: &str, config: &RunConfig) -> CliResult<()> {
    create_dir(&config.out)?;
    write_json(&Manifest::new(command, config), &config.out.join("manifest.json"))
}

/// Voxels of a mask container (one frame, nonzero = inside).
pub fn read_roi(path: &Path) -> CliResult<Vec<usize>> {
    let mask = read_volume(path).stage(Stage::Input)?;
    if mask.n_time() != 1 {
        return Err(CliError::new(
            Stage::Input,
            Error::Format { path: path.into(), reason: format!("ROI mask must have one frame, has {}", mask.n_time()) },
        ));
    }
    Ok(mask.data().iter().enumerate().filter(|p| *p.1 != 0.0).map(|p| p.0).collect())
}

/// An explicit mask, or the phantom layout's region when the volume has the
/// phantom's shape.
fn resolve_roi(
    mask: Option<&Path>,
    volume_dims: &[usize],
    spec: &DroSpec,
    layout: fn(&DroSpec) -> Vec<usize>,
) -> CliResult<Vec<usize>> {
    let roi = match mask {
        Some(p) => read_roi(p)?,
        None if volume_dims == spec.dims() => layout(spec),
        None => {
            return Err(CliError::new(
                Stage::Input,
                Error::Argument(format!(
                    "volume is {volume_dims:?}, not the configured phantom layout {:?}; pass --roi",
                    spec.dims()
                )),
            ))
        }
    };
    if roi.is_empty() {
        return Err(CliError::new(Stage::Input, Error::Argument("ROI is empty".into())));
    }
    Ok(roi)
}

/// Files written by `dro-gen`.
pub const DRO_FILES: [&str; 4] = ["noiseless.json", "noisy.json", "truth_summary.json", "aif.csv"];

pub fn cmd_dro_gen(config: &RunConfig) -> CliResult<()> {
    config.validate()?;
    with_pool(config.threads, || {
        let dro = generate_dro(&config.dro, &config.aif, &config.acquisition, config.seed).stage(Stage::Phantom)?;
        let out = &config.out;
        create_dir(out)?;
        write_volume(&dro.noiseless, &out.join("noiseless.json")).stage(Stage::Output)?;
        write_volume(&dro.noisy, &out.join("noisy.json")).stage(Stage::Output)?;
        let roi = config.dro.tissue_roi();
        write_param_map(&dro.truth, out, "truth", Some(&roi)).stage(Stage::Output)?;
        write_aif(&dro.aif_series, &out.join("aif.csv")).stage(Stage::Output)?;
        write_manifest("dro-gen", config)
    })
}

pub fn cmd_noise_add(config: &RunConfig, input: &Path, sigma_g: f64) -> CliResult<()> {
    with_pool(config.threads, || {
        let volume = read_volume(input).stage(Stage::Input)?;
        let noisy = add_rician_noise(&volume, sigma_g, config.seed).stage(Stage::Noise)?;
        create_dir(&config.out)?;
        write_volume(&noisy, &config.out.join("noisy.json")).stage(Stage::Output)?;
        write_manifest("noise-add", config)
    })
}

fn estimate_noise(config: &RunConfig, volume: &TimeSeriesVolume, roi: &[usize]) -> CliResult<RicianStats> {
    let pre = config.noise.pre_contrast_scans.min(volume.n_time());
    estimate_noise_dual(volume, roi, 0..pre, config.noise.homogeneous).stage(Stage::Noise)
}

pub fn cmd_noise_estimate(config: &RunConfig, input: &Path, mask: Option<&Path>) -> CliResult<RicianStats> {
    config.validate()?;
    with_pool(config.threads, || {
        let volume = read_volume(input).stage(Stage::Input)?;
        let roi = resolve_roi(mask, volume.dims(), &config.dro, DroSpec::aif_roi)?;
        let stats = estimate_noise(config, &volume, &roi)?;
        create_dir(&config.out)?;
        write_json(&stats, &config.out.join("noise.json"))?;
        write_manifest("noise-estimate", config)?;
        Ok(stats)
    })
}

/// A restored intensity volume and what it took to get there.
pub struct Restored {
    pub volume: TimeSeriesVolume,
    pub stabilized: Option<TimeSeriesVolume>,
    pub denoised_stabilized: Option<TimeSeriesVolume>,
    pub diagnostics: Option<TscfDiagnostics>,
    pub ivst_clamped: usize,
}

/// Applies `method` to a noisy intensity volume with noise level `sigma_g`.
pub fn restore(config: &RunConfig, noisy: &TimeSeriesVolume, sigma_g: f64) -> CliResult<Restored> {
    let plain =
        |volume| Restored { volume, stabilized: None, denoised_stabilized: None, diagnostics: None, ivst_clamped: 0 };
    match config.method {
        Method::None => Ok(plain(noisy.clone())),
        Method::Gaussian => Ok(plain(gaussian_smooth(noisy, config.gaussian_fwhm_px).stage(Stage::Restore)?)),
        Method::Tscf => {
            let stabilizer = vst::build_stabilizer(sigma_g).stage(Stage::Restore)?;
            let stabilized = vst::apply_vst(noisy, &stabilizer).stage(Stage::Restore)?;
            let (denoised, diagnostics) = tscf_denoise(&stabilized, &config.tscf).stage(Stage::Restore)?;
            let (volume, ivst) = vst::apply_ivst(&denoised, &stabilizer).stage(Stage::Restore)?;
            Ok(Restored {
                volume,
                stabilized: Some(stabilized),
                denoised_stabilized: Some(denoised),
                diagnostics: Some(diagnostics),
                ivst_clamped: ivst.clamped,
            })
        }
    }
}

/// Denoises `input`; the noise level is `sigma_g` when given, else estimated.
pub fn cmd_denoise(
    config: &RunConfig,
    input: &Path,
    sigma_g: Option<f64>,
    mask: Option<&Path>,
) -> CliResult<Option<TscfDiagnostics>> {
    config.validate()?;
    with_pool(config.threads, || {
        let noisy = read_volume(input).stage(Stage::Input)?;
        let sigma_g = match sigma_g {
            Some(s) => s,
            None if config.method == Method::Tscf => {
                let roi = resolve_roi(mask, noisy.dims(), &config.dro, DroSpec::aif_roi)?;
                estimate_noise(config, &noisy, &roi)?.sigma_g
            }
            None => 0.0,
        };
        let restored = restore(config, &noisy, sigma_g)?;
        create_dir(&config.out)?;
        write_volume(&restored.volume, &config.out.join("denoised.json")).stage(Stage::Output)?;
        if let Some(d) = &restored.diagnostics {
            write_json(d, &config.out.join("tscf.json"))?;
        }
        write_manifest("denoise", config)?;
        Ok(restored.diagnostics)
    })
}

pub fn cmd_fit(config: &RunConfig, input: &Path, aif: &Path, mask: Option<&Path>) -> CliResult<VolumeFit> {
    config.validate()?;
    with_pool(config.threads, || {
        let volume = read_volume(input).stage(Stage::Input)?;
        let aif = read_aif(aif).stage(Stage::Input)?;
        let roi = resolve_roi(mask, volume.dims(), &config.dro, DroSpec::tissue_roi)?;
        let fit = fit_volume(&volume, &aif, &config.acquisition, &roi, &config.fit).stage(Stage::Fit)?;
        write_param_map(&fit.params, &config.out, "estimate", Some(&roi)).stage(Stage::Output)?;
        write_json(&fit.bat, &config.out.join("bat.json"))?;
        write_manifest("fit", config)?;
        Ok(fit)
    })
}

/// Map scores against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapScores {
    pub nrmse_ktrans: f64,
    pub nrmse_ve: f64,
    pub mssim_ktrans: f64,
    pub mssim_ve: f64,
}

/// Region scored by [`score_maps`]: flat ROI plus the leading `rows × cols`
/// rectangle used for MSSIM.
struct ScoreRegion {
    roi: Vec<usize>,
    rows: usize,
    cols: usize,
}

impl ScoreRegion {
    fn for_dims(dims: &[usize], spec: &DroSpec) -> Self {
        if dims == spec.dims() {
            let cols = dims[1];
            Self { roi: spec.tissue_roi(), rows: spec.tissue_rows(), cols }
        } else {
            let cols = dims.last().copied().unwrap_or(1);
            let n: usize = dims.iter().product();
            Self { roi: (0..n).collect(), rows: n / cols.max(1), cols }
        }
    }
}

fn score_maps(estimate: &ParamMap, truth: &ParamMap, region: &ScoreRegion) -> tscf_core::Result<MapScores> {
    let crop = region.rows * region.cols;
    let map_ssim = |est: &[f64], tru: &[f64]| {
        let t = &tru[..crop];
        let range =
            t.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - t.iter().cloned().fold(f64::INFINITY, f64::min);
        mssim(&est[..crop], t, region.rows, region.cols, range)
    };
    Ok(MapScores {
        nrmse_ktrans: nrmse(&estimate.ktrans, &truth.ktrans, &region.roi)?,
        nrmse_ve: nrmse(&estimate.ve, &truth.ve, &region.roi)?,
        mssim_ktrans: map_ssim(&estimate.ktrans, &truth.ktrans)?,
        mssim_ve: map_ssim(&estimate.ve, &truth.ve)?,
    })
}

/// Scores `<estimate>/estimate_*` against `<truth>/truth_*`.
pub fn cmd_metrics(config: &RunConfig, estimate: &Path, truth: &Path) -> CliResult<MapScores> {
    let est = read_param_map(estimate, "estimate").stage(Stage::Input)?;
    let tru = read_param_map(truth, "truth").stage(Stage::Input)?;
    if est.dims != tru.dims {
        return Err(CliError::new(
            Stage::Metrics,
            Error::Argument(format!("estimate {:?} and truth {:?} differ in shape", est.dims, tru.dims)),
        ));
    }
    let scores = score_maps(&est, &tru, &ScoreRegion::for_dims(&est.dims, &config.dro)).stage(Stage::Metrics)?;
    create_dir(&config.out)?;
    write_json(&scores, &config.out.join("metrics.json"))?;
    write_manifest("metrics", config)?;
    Ok(scores)
}

/// Per-block errors, normalized by the truth range over the whole ROI (a
/// single block's truth is constant).
fn block_table(spec: &DroSpec, estimate: &ParamMap, truth: &ParamMap) -> String {
    let roi = spec.tissue_roi();
    let range = |v: &[f64]| {
        let (lo, hi) = roi.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(v[i]), hi.max(v[i])));
        hi - lo
    };
    let (rk, rv) = (range(&truth.ktrans), range(&truth.ve));
    let nk = spec.ktrans_grid.len();
    let nv = spec.ve_grid.len();
    let mut sums = vec![(0.0, 0.0, 0usize); nk * nv];
    for &v in &roi {
        let (i, j) = spec.block_of(v).expect("tissue voxel");
        let s = &mut sums[i * nv + j];
        s.0 += (estimate.ktrans[v] - truth.ktrans[v]).powi(2);
        s.1 += (estimate.ve[v] - truth.ve[v]).powi(2);
        s.2 += 1;
    }
    let mut out = String::from("ktrans,ve,nrmse_ktrans,nrmse_ve\n");
    for (i, k) in spec.ktrans_grid.iter().enumerate() {
        for (j, ve) in spec.ve_grid.iter().enumerate() {
            let (sk, sv, n) = sums[i * nv + j];
            let n = n.max(1) as f64;
            out.push_str(&format!("{k},{ve},{},{}\n", (sk / n).sqrt() / rk, (sv / n).sqrt() / rv));
        }
    }
    out
}

/// Where the pipeline takes its phantom from.
pub enum PipelineInput<'a> {
    /// Synthesize from the configuration.
    Generate,
    /// A `dro-gen` output directory (`noisy.json` and `truth_*`).
    Directory(&'a Path),
}

/// Noise estimation, restoration, fitting and scoring on a phantom.
pub fn cmd_pipeline(config: &RunConfig, input: PipelineInput<'_>) -> CliResult<EvalReport> {
    config.validate()?;
    with_pool(config.threads, || {
        let total = Instant::now();
        let mut runtime = BTreeMap::new();
        let mut clock = |name: &str, t: Instant| {
            runtime.insert(name.to_string(), t.elapsed().as_secs_f64());
        };
        let spec = &config.dro;

        let t = Instant::now();
        let (noisy, truth) = match input {
            PipelineInput::Generate => {
                let dro = generate_dro(spec, &config.aif, &config.acquisition, config.seed).stage(Stage::Phantom)?;
                (dro.noisy, dro.truth)
            }
            PipelineInput::Directory(dir) => {
                let noisy = read_volume(&dir.join("noisy.json")).stage(Stage::Input)?;
                let truth = read_param_map(dir, "truth").stage(Stage::Input)?;
                if noisy.dims() != spec.dims() || truth.dims != spec.dims() {
                    return Err(CliError::new(
                        Stage::Input,
                        Error::Argument(format!("{} does not match the configured phantom layout", dir.display())),
                    ));
                }
                (noisy, truth)
            }
        };
        clock("input", t);

        let t = Instant::now();
        let aif_roi = spec.aif_roi();
        let noise = estimate_noise(config, &noisy, &aif_roi)?;
        clock("noise", t);

        // The arterial curve comes from the raw blood rows for every method,
        // so methods differ only in the tissue data they fit.
        let t = Instant::now();
        let aif = aif_from_roi(&noisy, &aif_roi, noise.sigma_g).stage(Stage::Aif)?;
        clock("aif", t);

        let t = Instant::now();
        let restored = restore(config, &noisy, noise.sigma_g)?;
        clock("restore", t);

        let t = Instant::now();
        let roi = spec.tissue_roi();
        let fit = fit_volume(&restored.volume, &aif, &config.acquisition, &roi, &config.fit).stage(Stage::Fit)?;
        clock("fit", t);

        let t = Instant::now();
        let scores = score_maps(&fit.params, &truth, &ScoreRegion::for_dims(spec.dims().as_slice(), spec))
            .stage(Stage::Metrics)?;
        let bat_std = bat_dispersion(&fit.bat).stage(Stage::Metrics)?;
        clock("metrics", t);

        let t = Instant::now();
        let out = &config.out;
        create_dir(out)?;
        write_param_map(&fit.params, &out.join("params"), "estimate", Some(&roi)).stage(Stage::Output)?;
        fs::write(out.join("blocks.csv"), block_table(spec, &fit.params, &truth))
            .map_err(|e| CliError::io(Stage::Output, &out.join("blocks.csv"), e))?;
        if config.keep_intermediates {
            let dir = out.join("intermediate");
            create_dir(&dir)?;
            write_volume(&noisy, &dir.join("noisy.json")).stage(Stage::Output)?;
            write_volume(&restored.volume, &dir.join("restored.json")).stage(Stage::Output)?;
            if let Some(v) = &restored.stabilized {
                write_volume(v, &dir.join("stabilized.json")).stage(Stage::Output)?;
            }
            if let Some(v) = &restored.denoised_stabilized {
                write_volume(v, &dir.join("denoised_stabilized.json")).stage(Stage::Output)?;
            }
            if let Some(d) = &restored.diagnostics {
                write_json(d, &dir.join("tscf.json"))?;
            }
            write_aif(&aif, &dir.join("aif.csv")).stage(Stage::Output)?;
            write_json(&noise, &dir.join("noise.json"))?;
            write_json(&fit.bat, &dir.join("bat.json"))?;
        }
        write_manifest("pipeline", config)?;
        clock("output", t);
        clock("total", total);

        let report = EvalReport {
            method: config.method.as_str().to_string(),
            nrmse_ktrans: scores.nrmse_ktrans,
            nrmse_ve: scores.nrmse_ve,
            mssim_ktrans: scores.mssim_ktrans,
            mssim_ve: scores.mssim_ve,
            bat_std,
            bat_valid_fraction: fit.bat.valid_fraction,
            sigma_g_hat: noise.sigma_g,
            convergence_rate: fit.params.summary(Some(&roi)).convergence_rate,
            config_hash: config.hash(),
            runtime_s: runtime,
        };
        write_json(&report, &out.join("report.json"))?;
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub rows: usize,
    pub cols: usize,
    pub n_time: usize,
    pub voxels: usize,
    pub times_s: Vec<f64>,
    pub mean_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub threads: usize,
    pub entries: Vec<BenchEntry>,
    /// Between consecutive sizes: time ratio raised to `1 / log2(voxel ratio)`.
    pub growth_per_doubling: Vec<f64>,
    /// Same, from the smallest to the largest size.
    pub overall_growth_per_doubling: f64,
}

fn growth(a: &BenchEntry, b: &BenchEntry) -> f64 {
    (b.mean_s / a.mean_s).powf(1.0 / (b.voxels as f64 / a.voxels as f64).log2())
}

/// Phantom of `rows × cols` built from the configured one: 10-pixel blocks,
/// the configured grids repeated as needed, 10 blood rows.
pub fn bench_spec(base: &DroSpec, rows: usize, cols: usize) -> CliResult<DroSpec> {
    const BLOCK: usize = 10;
    if rows <= BLOCK || !rows.is_multiple_of(BLOCK) || cols == 0 || !cols.is_multiple_of(BLOCK) {
        return Err(CliError::new(
            Stage::Bench,
            Error::Argument(format!("bench size {rows}×{cols}: rows must exceed 10 and both must be multiples of 10")),
        ));
    }
    let cycle = |grid: &[f64], n: usize| grid.iter().cycle().take(n).copied().collect::<Vec<_>>();
    Ok(DroSpec {
        ktrans_grid: cycle(&base.ktrans_grid, rows / BLOCK - 1),
        ve_grid: cycle(&base.ve_grid, cols / BLOCK),
        block_px: BLOCK,
        aif_rows: BLOCK,
        ..base.clone()
    })
}

/// Times the collaborative filter alone over the configured sizes.
pub fn cmd_bench(config: &RunConfig) -> CliResult<BenchReport> {
    config.validate()?;
    if !(config.dro.sigma_g > 0.0) {
        return Err(CliError::new(Stage::Bench, Error::Argument("bench needs a noisy phantom (sigma_g > 0)".into())));
    }
    let threads = if config.threads == 0 { rayon::current_num_threads() } else { config.threads };
    with_pool(config.threads, || {
        let stabilizer = vst::build_stabilizer(config.dro.sigma_g).stage(Stage::Bench)?;
        let mut entries = Vec::new();
        for &[rows, cols] in &config.bench.sizes {
            let spec = bench_spec(&config.dro, rows, cols)?;
            let dro = generate_dro(&spec, &config.aif, &config.acquisition, config.seed).stage(Stage::Bench)?;
            let stabilized = vst::apply_vst(&dro.noisy, &stabilizer).stage(Stage::Bench)?;
            let mut times_s = Vec::with_capacity(config.bench.repetitions);
            for _ in 0..config.bench.repetitions {
                let t = Instant::now();
                tscf_denoise(&stabilized, &config.tscf).stage(Stage::Bench)?;
                times_s.push(t.elapsed().as_secs_f64());
            }
            let mean_s = times_s.iter().sum::<f64>() / times_s.len() as f64;
            entries.push(BenchEntry { rows, cols, n_time: spec.n_time(), voxels: rows * cols, times_s, mean_s });
        }
        let growth_per_doubling = entries.windows(2).map(|w| growth(&w[0], &w[1])).collect();
        let overall_growth_per_doubling = match (entries.first(), entries.last()) {
            (Some(a), Some(b)) if b.voxels > a.voxels => growth(a, b),
            _ => f64::NAN,
        };
        let report = BenchReport { threads, entries, growth_per_doubling, overall_growth_per_doubling };
        create_dir(&config.out)?;
        write_json(&report, &config.out.join("bench.json"))?;
        write_manifest("bench", config)?;
        Ok(report)
    })
}

/// Paths that `dro-gen` wrote into `dir`.
pub fn dro_outputs(dir: &Path) -> Vec<PathBuf> {
    DRO_FILES.iter().map(|f| dir.join(f)).chain([dir.join("manifest.json")]).collect()
}
