//! Run configuration: one JSON document plus flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tscf_core::phantom::{AifModel, DroSpec};
use tscf_core::pk::FitConfig;
use tscf_core::tscf::TscfConfig;
use tscf_core::AcquisitionParams;

use crate::error::{CliError, Stage};

/// Restoration applied before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// VST, collaborative filtering, unbiased inverse VST.
    Tscf,
    /// Per-frame Gaussian smoothing of the intensities.
    Gaussian,
    None,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tscf => "tscf",
            Method::Gaussian => "gaussian",
            Method::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Scans `[0, n)` count as pre-contrast.
    pub pre_contrast_scans: usize,
    /// Pool the noise ROI and try the closed-form estimator first.
    pub homogeneous: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { pre_contrast_scans: 10, homogeneous: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// `[rows, cols]`; rows include the 10 blood rows, both multiples of 10.
    pub sizes: Vec<[usize; 2]>,
    pub repetitions: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { sizes: vec![[30, 30], [40, 40], [50, 50], [50, 60]], repetitions: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub out: PathBuf,
    pub keep_intermediates: bool,
    pub gaussian_fwhm_px: f64,
    pub noise: NoiseConfig,
    pub dro: DroSpec,
    pub aif: AifModel,
    pub acquisition: AcquisitionParams,
    pub tscf: TscfConfig,
    pub fit: FitConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Tscf,
            seed: 42,
            threads: 0,
            out: PathBuf::from("out"),
            keep_intermediates: false,
            gaussian_fwhm_px: 1.5,
            noise: NoiseConfig::default(),
            dro: DroSpec::default(),
            aif: AifModel::default(),
            acquisition: AcquisitionParams::default(),
            tscf: TscfConfig::default(),
            fit: FitConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(Stage::Config, path, e))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| {
            CliError::new(Stage::Config, tscf_core::Error::Format { path: path.into(), reason: e.to_string() })
        })?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let arg = |msg: String| CliError::new(Stage::Config, tscf_core::Error::Argument(msg));
        self.dro.validate().map_err(|e| CliError::new(Stage::Config, e))?;
        self.aif.validate().map_err(|e| CliError::new(Stage::Config, e))?;
        self.acquisition.validate().map_err(|e| CliError::new(Stage::Config, e))?;
        self.tscf.validate().map_err(|e| CliError::new(Stage::Config, e))?;
        self.fit.validate().map_err(|e| CliError::new(Stage::Config, e))?;
        if !(self.gaussian_fwhm_px > 0.0) {
            return Err(arg(format!("gaussian_fwhm_px must be > 0, got {}", self.gaussian_fwhm_px)));
        }
        let pre = self.noise.pre_contrast_scans;
        if pre == 0 || pre > self.dro.n_time() {
            return Err(arg(format!("pre_contrast_scans must be in [1, {}], got {pre}", self.dro.n_time())));
        }
        if self.bench.repetitions == 0 {
            return Err(arg("bench.repetitions must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON with the settings that cannot change
    /// results (thread count, output directory) blanked.
    pub fn hash(&self) -> String {
        let canonical = Self { threads: 0, out: PathBuf::new(), ..self.clone() };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Record written next to every run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub versions: Versions,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub tscf_core: String,
    pub tscf_cli: String,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config.hash(),
            seed: config.seed,
            threads: config.threads,
            versions: Versions {
                tscf_core: tscf_core::VERSION.to_string(),
                tscf_cli: env!("CARGO_PKG_VERSION").to_string(),
            },
            config: config.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"methd": "tscf"}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"tscf": {"max_clusters": 4}}"#).is_err());
        let partial: RunConfig =
            serde_json::from_str(r#"{"method": "gaussian", "tscf": {"max_cluster": 64}}"#).unwrap();
        assert_eq!(partial.method, Method::Gaussian);
        assert_eq!(partial.tscf.max_cluster, 64);
        assert_eq!(partial.tscf.max_iters, TscfConfig::default().max_iters);
    }

    #[test]
    fn hash_ignores_threads_and_output() {
        let a = RunConfig::default();
        let b = RunConfig { threads: 8, out: "elsewhere".into(), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig { seed: 7, ..a.clone() }.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
