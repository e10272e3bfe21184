//! Data model and file I/O shared by every pipeline stage.
//!
//! A volume is stored as a JSON header next to a packed little-endian `f32`
//! raster (`<name>.json` + `<name>.f32`). Rasters are spatial-major,
//! time-minor, so the time series of one voxel is a contiguous slice.
//!
//! AIF curves are CSV files with a `time_s,value` header, preceded either by a
//! `# kind=..., upsample_factor=...` comment line or accompanied by a JSON
//! sidecar with the same stem.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the values of a [`TimeSeriesVolume`] represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    /// Magnitude MR intensity (non-negative).
    Intensity,
    /// Contrast agent concentration in mM.
    Concentration,
    /// Variance-stabilized intensity.
    Stabilized,
    /// A per-voxel parameter map (single time point).
    Parameter,
}

/// A 2-D or 3-D raster of voxel time series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesVolume {
    dims: Vec<usize>,
    n_time: usize,
    dt_seconds: f64,
    value_kind: ValueKind,
    data: Vec<f64>,
}

impl TimeSeriesVolume {
    pub fn new(
        dims: Vec<usize>,
        n_time: usize,
        dt_seconds: f64,
        value_kind: ValueKind,
        data: Vec<f64>,
    ) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::Argument(format!("volumes are 2-D or 3-D, got {} spatial dims", dims.len())));
        }
        if dims.contains(&0) || n_time == 0 {
            return Err(Error::Argument(format!("all extents must be >= 1 (dims {dims:?}, n_time {n_time})")));
        }
        if !(dt_seconds > 0.0 && dt_seconds.is_finite()) {
            return Err(Error::Argument(format!("dt_seconds must be > 0, got {dt_seconds}")));
        }
        let expected = dims.iter().product::<usize>() * n_time;
        if data.len() != expected {
            return Err(Error::Truncated { expected, found: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value {} at raster offset {i}", data[i])));
        }
        if value_kind == ValueKind::Intensity {
            if let Some(i) = data.iter().position(|&v| v < 0.0) {
                return Err(Error::Data(format!("negative intensity {} at raster offset {i}", data[i])));
            }
        }
        Ok(Self { dims, n_time, dt_seconds, value_kind, data })
    }

    pub fn zeros(dims: Vec<usize>, n_time: usize, dt_seconds: f64, value_kind: ValueKind) -> Result<Self> {
        let len = dims.iter().product::<usize>() * n_time;
        Self::new(dims, n_time, dt_seconds, value_kind, vec![0.0; len])
    }

    /// Builds a volume by evaluating `f(voxel, t)` for every sample.
    pub fn from_fn(
        dims: Vec<usize>,
        n_time: usize,
        dt_seconds: f64,
        value_kind: ValueKind,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let n_vox = dims.iter().product::<usize>();
        let mut data = Vec::with_capacity(n_vox * n_time);
        for v in 0..n_vox {
            for t in 0..n_time {
                data.push(f(v, t));
            }
        }
        Self::new(dims, n_time, dt_seconds, value_kind, data)
    }

    /// Same geometry, new values.
    pub fn with_data(&self, value_kind: ValueKind, data: Vec<f64>) -> Result<Self> {
        Self::new(self.dims.clone(), self.n_time, self.dt_seconds, value_kind, data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn dt_seconds(&self) -> f64 {
        self.dt_seconds
    }

    pub fn value_kind(&self) -> ValueKind {
        self.value_kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// Acquisition times in seconds, `t * dt`.
    pub fn times(&self) -> Vec<f64> {
        (0..self.n_time).map(|t| t as f64 * self.dt_seconds).collect()
    }

    pub fn series(&self, voxel: usize) -> &[f64] {
        &self.data[voxel * self.n_time..(voxel + 1) * self.n_time]
    }

    pub fn series_iter(&self) -> std::slice::Chunks<'_, f64> {
        self.data.chunks(self.n_time)
    }

    pub fn get(&self, voxel: usize, t: usize) -> f64 {
        self.data[voxel * self.n_time + t]
    }

    pub fn voxel_index(&self, coords: &[usize]) -> usize {
        voxel_index(&self.dims, coords)
    }

    pub fn voxel_coords(&self, voxel: usize) -> Vec<usize> {
        voxel_coords(&self.dims, voxel)
    }

    /// Flat raster offset of `(coords, t)`.
    pub fn flat_index(&self, coords: &[usize], t: usize) -> usize {
        self.voxel_index(coords) * self.n_time + t
    }

    /// One time point as a spatial image.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        self.series_iter().map(|s| s[t]).collect()
    }
}

/// Row-major flat index of a spatial coordinate.
pub fn voxel_index(dims: &[usize], coords: &[usize]) -> usize {
    debug_assert_eq!(dims.len(), coords.len());
    coords.iter().zip(dims).fold(0, |acc, (&c, &d)| {
        debug_assert!(c < d);
        acc * d + c
    })
}

/// Inverse of [`voxel_index`].
pub fn voxel_coords(dims: &[usize], mut voxel: usize) -> Vec<usize> {
    let mut coords = vec![0; dims.len()];
    for (c, &d) in coords.iter_mut().zip(dims).rev() {
        *c = voxel % d;
        voxel /= d;
    }
    coords
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeHeader {
    dims: Vec<usize>,
    n_time: usize,
    dt_seconds: f64,
    value_kind: ValueKind,
    raster: String,
    byte_order: String,
}

fn raster_path(header_path: &Path) -> Result<(PathBuf, String)> {
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(header_path, "header path has no file stem"))?;
    let name = format!("{stem}.f32");
    let dir = header_path.parent().unwrap_or_else(|| Path::new(""));
    Ok((dir.join(&name), name))
}

/// Writes `<name>.json` and `<name>.f32`; `path` names the JSON header.
///
/// The raster is `f32`, so values are rounded to the nearest `f32` on write.
pub fn write_volume(volume: &TimeSeriesVolume, path: &Path) -> Result<()> {
    let (raster, raster_name) = raster_path(path)?;
    let mut bytes = Vec::with_capacity(volume.data.len() * 4);
    for (i, &v) in volume.data.iter().enumerate() {
        let narrowed = v as f32;
        if !narrowed.is_finite() {
            return Err(Error::Data(format!("value {v} at raster offset {i} does not fit in f32")));
        }
        bytes.extend_from_slice(&narrowed.to_le_bytes());
    }
    let header = VolumeHeader {
        dims: volume.dims.clone(),
        n_time: volume.n_time,
        dt_seconds: volume.dt_seconds,
        value_kind: volume.value_kind,
        raster: raster_name,
        byte_order: "little".to_string(),
    };
    let mut json = serde_json::to_string_pretty(&header).expect("header serializes");
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    fs::write(&raster, bytes).map_err(|e| Error::io(&raster, e))?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<TimeSeriesVolume> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if header.byte_order != "little" {
        return Err(Error::format(path, format!("unsupported byte order {:?}", header.byte_order)));
    }
    let raster = path.parent().unwrap_or_else(|| Path::new("")).join(&header.raster);
    let bytes = fs::read(&raster).map_err(|e| Error::io(&raster, e))?;
    let expected = header.dims.iter().product::<usize>() * header.n_time;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(Error::Truncated { expected, found: bytes.len() / 4 });
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    TimeSeriesVolume::new(header.dims, header.n_time, header.dt_seconds, header.value_kind, data).map_err(|e| match e {
        Error::Argument(reason) => Error::format(path, reason),
        other => other,
    })
}

/// What an [`AifSeries`] samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AifKind {
    BloodIntensity,
    BloodConcentration,
    PlasmaConcentration,
}

impl AifKind {
    fn as_str(self) -> &'static str {
        match self {
            AifKind::BloodIntensity => "blood_intensity",
            AifKind::BloodConcentration => "blood_concentration",
            AifKind::PlasmaConcentration => "plasma_concentration",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "blood_intensity" => Some(AifKind::BloodIntensity),
            "blood_concentration" => Some(AifKind::BloodConcentration),
            "plasma_concentration" => Some(AifKind::PlasmaConcentration),
            _ => None,
        }
    }
}

/// Arterial input curve on its own time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AifSeries {
    times: Vec<f64>,
    values: Vec<f64>,
    kind: AifKind,
    upsample_factor: usize,
}

impl AifSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, kind: AifKind, upsample_factor: usize) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Argument(format!(
                "AIF needs matching non-empty times/values ({} vs {})",
                times.len(),
                values.len()
            )));
        }
        if upsample_factor == 0 {
            return Err(Error::Argument("upsample_factor must be >= 1".into()));
        }
        if let Some(w) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!(
                "AIF times not strictly increasing at row {} ({} -> {})",
                w + 1,
                times[w],
                times[w + 1]
            )));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Data("AIF contains non-finite values".into()));
        }
        if kind == AifKind::PlasmaConcentration && values.iter().any(|&v| v < 0.0) {
            return Err(Error::Data("plasma concentration must be >= 0".into()));
        }
        Ok(Self { times, values, kind, upsample_factor })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> AifKind {
        self.kind
    }

    pub fn upsample_factor(&self) -> usize {
        self.upsample_factor
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sample spacing of the first interval.
    pub fn dt(&self) -> Option<f64> {
        (self.times.len() >= 2).then(|| self.times[1] - self.times[0])
    }

    /// Checks that this curve can drive a tissue series of `n_time` scans.
    pub fn check_covers(&self, n_time: usize) -> Result<()> {
        // the last scan sits on fine sample (n_time - 1) f
        let needed = n_time.saturating_sub(1) * self.upsample_factor + 1;
        if self.len() < needed {
            return Err(Error::Argument(format!(
                "AIF has {} samples, need {} ({} scans at upsample {})",
                self.len(),
                needed,
                n_time,
                self.upsample_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AifSidecar {
    kind: AifKind,
    upsample_factor: usize,
}

fn parse_aif_comment(path: &Path, line: &str) -> Result<AifSidecar> {
    let body = line.trim_start_matches('#').trim();
    let mut kind = None;
    let mut factor = None;
    for field in body.split(',') {
        let field = field.trim();
        if field.is_empty() {
            continue;
        }
        let (key, value) =
            field.split_once('=').ok_or_else(|| Error::format(path, format!("malformed header field {field:?}")))?;
        match key.trim() {
            "kind" => {
                kind = Some(
                    AifKind::parse(value.trim())
                        .ok_or_else(|| Error::format(path, format!("unknown AIF kind {:?}", value.trim())))?,
                )
            }
            "upsample_factor" => {
                factor = Some(
                    value
                        .trim()
                        .parse::<usize>()
                        .map_err(|e| Error::format(path, format!("bad upsample_factor: {e}")))?,
                )
            }
            other => return Err(Error::format(path, format!("unknown header key {other:?}"))),
        }
    }
    match (kind, factor) {
        (Some(kind), Some(upsample_factor)) => Ok(AifSidecar { kind, upsample_factor }),
        _ => Err(Error::format(path, "header comment must declare kind and upsample_factor")),
    }
}

pub fn read_aif(path: &Path) -> Result<AifSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or("");
    let meta = if first.trim_start().starts_with('#') {
        parse_aif_comment(path, first)?
    } else {
        let sidecar = path.with_extension("json");
        let json = fs::read_to_string(&sidecar)
            .map_err(|_| Error::format(path, "no `# kind=...` header line and no JSON sidecar"))?;
        serde_json::from_str(&json).map_err(|e| Error::format(&sidecar, e.to_string()))?
    };

    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if headers.len() != 2 || &headers[0] != "time_s" || &headers[1] != "value" {
        return Err(Error::format(path, format!("expected header `time_s,value`, got {headers:?}")));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let parse = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|e| Error::format(path, format!("row {}: {e}", row + 1)))
        };
        times.push(parse(0)?);
        values.push(parse(1)?);
    }
    AifSeries::new(times, values, meta.kind, meta.upsample_factor).map_err(|e| match e {
        Error::Data(reason) | Error::Argument(reason) => Error::format(path, reason),
        other => other,
    })
}

pub fn write_aif(series: &AifSeries, path: &Path) -> Result<()> {
    let mut out =
        format!("# kind={}, upsample_factor={}\ntime_s,value\n", series.kind.as_str(), series.upsample_factor);
    for (t, v) in series.times.iter().zip(&series.values) {
        out.push_str(&format!("{t},{v}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// MR acquisition constants for the spoiled gradient-echo signal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionParams {
    pub tr_ms: f64,
    pub flip_angle_deg: f64,
    pub t10_tissue_ms: f64,
    pub t10_blood_ms: f64,
    /// Relaxivity in mM⁻¹ms⁻¹.
    pub r1: f64,
    pub hct: f64,
}

impl Default for AcquisitionParams {
    /// The reference-object protocol: 30° flip, TR 5 ms, T10 1000/1440 ms,
    /// r1 = 0.0045 mM⁻¹ms⁻¹, hematocrit 45%.
    fn default() -> Self {
        Self { tr_ms: 5.0, flip_angle_deg: 30.0, t10_tissue_ms: 1000.0, t10_blood_ms: 1440.0, r1: 0.0045, hct: 0.45 }
    }
}

impl AcquisitionParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tr_ms > 0.0
            && self.flip_angle_deg > 0.0
            && self.flip_angle_deg < 90.0
            && self.t10_tissue_ms > 0.0
            && self.t10_blood_ms > 0.0
            && self.r1 > 0.0
            && self.hct > 0.0
            && self.hct < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid acquisition parameters {self:?}")))
        }
    }

    pub fn flip_rad(&self) -> f64 {
        self.flip_angle_deg.to_radians()
    }

    /// `A = exp(-TR / T10)`.
    pub fn a(&self, t10_ms: f64) -> f64 {
        (-self.tr_ms / t10_ms).exp()
    }

    /// `B = A cos(flip)`.
    pub fn b(&self, t10_ms: f64) -> f64 {
        self.a(t10_ms) * self.flip_rad().cos()
    }

    /// `D = -TR r1`, per mM.
    pub fn d(&self) -> f64 {
        -self.tr_ms * self.r1
    }
}

/// Per-voxel Tofts parameters and fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMap {
    pub dims: Vec<usize>,
    /// min⁻¹
    pub ktrans: Vec<f64>,
    pub ve: Vec<f64>,
    /// min⁻¹, `ktrans / ve`
    pub kep: Vec<f64>,
    pub residual: Vec<f64>,
    pub converged: Vec<bool>,
    pub bat_index: Vec<Option<usize>>,
}

impl ParamMap {
    pub fn empty(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            ktrans: vec![0.0; n],
            ve: vec![0.0; n],
            kep: vec![0.0; n],
            residual: vec![0.0; n],
            converged: vec![false; n],
            bat_index: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.ktrans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ktrans.is_empty()
    }

    /// Stores a voxel's estimate; `kep` is derived.
    pub fn set(&mut self, voxel: usize, ktrans: f64, ve: f64, residual: f64, converged: bool) {
        self.ktrans[voxel] = ktrans;
        self.ve[voxel] = ve;
        self.kep[voxel] = if ve > 0.0 { ktrans / ve } else { 0.0 };
        self.residual[voxel] = residual;
        self.converged[voxel] = converged;
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.len() {
            if self.ktrans[i] < 0.0 {
                return Err(Error::Data(format!("negative ktrans at voxel {i}")));
            }
            if self.converged[i] {
                let ve = self.ve[i];
                if !(ve > 0.0 && ve <= 1.0) {
                    return Err(Error::Data(format!("ve {ve} out of (0, 1] at voxel {i}")));
                }
                let kep = self.ktrans[i] / ve;
                if (self.kep[i] - kep).abs() > 1e-12 * kep.abs().max(f64::MIN_POSITIVE) {
                    return Err(Error::Data(format!("kep inconsistent at voxel {i}")));
                }
            }
        }
        Ok(())
    }

    fn map_volume(&self, values: Vec<f64>) -> Result<TimeSeriesVolume> {
        TimeSeriesVolume::new(self.dims.clone(), 1, 1.0, ValueKind::Parameter, values)
    }

    /// Summary statistics over `roi` (all voxels when `None`).
    pub fn summary(&self, roi: Option<&[usize]>) -> ParamSummary {
        let all: Vec<usize>;
        let roi = match roi {
            Some(r) => r,
            None => {
                all = (0..self.len()).collect();
                &all
            }
        };
        let n = roi.len().max(1) as f64;
        let mean = |v: &[f64]| roi.iter().map(|&i| v[i]).sum::<f64>() / n;
        let n_converged = roi.iter().filter(|&&i| self.converged[i]).count();
        ParamSummary {
            n_voxels: roi.len(),
            n_converged,
            convergence_rate: n_converged as f64 / n,
            mean_ktrans: mean(&self.ktrans),
            mean_ve: mean(&self.ve),
            mean_kep: mean(&self.kep),
            mean_residual: mean(&self.residual),
        }
    }
}

/// JSON summary written next to the parameter containers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub n_voxels: usize,
    pub n_converged: usize,
    pub convergence_rate: f64,
    pub mean_ktrans: f64,
    pub mean_ve: f64,
    pub mean_kep: f64,
    pub mean_residual: f64,
}

const PARAM_NAMES: [&str; 6] = ["ktrans", "ve", "kep", "residual", "converged", "bat_index"];

/// Writes one container per parameter as `<dir>/<prefix>_<param>.json` plus
/// `<dir>/<prefix>_summary.json`. Missing BAT is stored as -1.
pub fn write_param_map(map: &ParamMap, dir: &Path, prefix: &str, roi: Option<&[usize]>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let columns: [Vec<f64>; 6] = [
        map.ktrans.clone(),
        map.ve.clone(),
        map.kep.clone(),
        map.residual.clone(),
        map.converged.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
        map.bat_index.iter().map(|b| b.map_or(-1.0, |b| b as f64)).collect(),
    ];
    for (name, values) in PARAM_NAMES.iter().zip(columns) {
        let vol = map.map_volume(values)?;
        write_volume(&vol, &dir.join(format!("{prefix}_{name}.json")))?;
    }
    let summary_path = dir.join(format!("{prefix}_summary.json"));
    let mut json = serde_json::to_string_pretty(&map.summary(roi)).expect("summary serializes");
    json.push('\n');
    fs::write(&summary_path, json).map_err(|e| Error::io(&summary_path, e))
}

pub fn read_param_map(dir: &Path, prefix: &str) -> Result<ParamMap> {
    let mut columns = Vec::with_capacity(PARAM_NAMES.len());
    let mut dims = None;
    for name in PARAM_NAMES {
        let vol = read_volume(&dir.join(format!("{prefix}_{name}.json")))?;
        if let Some(d) = &dims {
            if d != vol.dims() {
                return Err(Error::Data(format!("{prefix}_{name} has mismatched dims")));
            }
        }
        dims = Some(vol.dims().to_vec());
        columns.push(vol.into_data());
    }
    let mut it = columns.into_iter();
    let mut next = || it.next().expect("six columns");
    Ok(ParamMap {
        dims: dims.expect("at least one column"),
        ktrans: next(),
        ve: next(),
        kep: next(),
        residual: next(),
        converged: next().into_iter().map(|v| v != 0.0).collect(),
        bat_index: next().into_iter().map(|v| (v >= 0.0).then_some(v as usize)).collect(),
    })
}
