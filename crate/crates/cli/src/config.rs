//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use safecert::benchmark::{PairMode, SynthParams};
use safecert::KernelSpec;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Dp,
    Imp,
    Ssr,
    Barrier,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Dp => "dp",
            Method::Imp => "imp",
            Method::Ssr => "ssr",
            Method::Barrier => "barrier",
        }
    }

    /// Methods that produce a per-point estimate grid.
    pub fn is_pointwise(self) -> bool {
        self != Method::Barrier
    }

    /// Which hyperparameter family the method uses.
    pub fn kernel_family(self) -> KernelFamily {
        if self == Method::Direct {
            KernelFamily::Direct
        } else {
            KernelFamily::Dp
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Direct,
    Dp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemConfig,
    pub data: DataConfig,
    pub grid: GridConfig,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub kernels: Vec<KernelOverride>,
    #[serde(default)]
    pub dp: DpConfig,
    #[serde(default)]
    pub abstraction: AbstractionConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub barrier: Option<BarrierConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub alphas: Vec<f64>,
    #[serde(default = "defaults::h")]
    pub h: f64,
    #[serde(default = "defaults::noise_scale")]
    pub noise_scale: f64,
    #[serde(default = "defaults::coupling_gain")]
    pub coupling_gain: f64,
    #[serde(default = "defaults::coupling_sharpness")]
    pub coupling_sharpness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub horizons: Vec<usize>,
    /// Trajectories for the direct estimator.
    pub n_traj: usize,
    /// One-step pairs per horizon step, `N̂ = pairs_per_step · T`.
    pub pairs_per_step: usize,
    #[serde(default = "defaults::pair_mode")]
    pub pair_mode: PairMode,
    /// Held-out calibration trajectories; zero disables calibration.
    #[serde(default)]
    pub n_cal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: Vec<usize>,
    pub n_mc: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelOverride {
    pub family: KernelFamily,
    pub pair_mode: PairMode,
    pub horizon: usize,
    pub squared_lengthscales: Vec<f64>,
    pub regularizer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    #[serde(default)]
    pub epsilon: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { epsilon: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionConfig {
    #[serde(default = "defaults::cells")]
    pub cells: Vec<usize>,
    /// Constant interval radius for the IMP model.
    #[serde(default)]
    pub radius: f64,
    /// Unmatched mass δ for the SSR update.
    #[serde(default)]
    pub delta: f64,
}

impl Default for AbstractionConfig {
    fn default() -> Self {
        Self { cells: defaults::cells(), radius: 0.0, delta: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    #[serde(default = "defaults::bins")]
    pub bins: usize,
    #[serde(default = "defaults::delta_conf")]
    pub delta: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { bins: defaults::bins(), delta: defaults::delta_conf() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    /// CSV `cx1,…,cxd,alpha`, relative to the config file.
    pub candidate: PathBuf,
    pub domain_low: Vec<f64>,
    pub domain_high: Vec<f64>,
    pub domain_resolution: Vec<usize>,
    /// Initial set; defaults to the bounding box of the safe set.
    #[serde(default)]
    pub initial_low: Option<Vec<f64>>,
    #[serde(default)]
    pub initial_high: Option<Vec<f64>>,
    pub initial_resolution: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "defaults::out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: defaults::out_dir() }
    }
}

mod defaults {
    use super::*;

    pub fn h() -> f64 {
        SynthParams::default().h
    }
    pub fn noise_scale() -> f64 {
        SynthParams::default().noise_scale
    }
    pub fn coupling_gain() -> f64 {
        SynthParams::default().coupling_gain
    }
    pub fn coupling_sharpness() -> f64 {
        SynthParams::default().coupling_sharpness
    }
    pub fn pair_mode() -> PairMode {
        PairMode::Iid
    }
    pub fn cells() -> Vec<usize> {
        vec![20, 20]
    }
    pub fn bins() -> usize {
        10
    }
    pub fn delta_conf() -> f64 {
        0.1
    }
    pub fn out_dir() -> PathBuf {
        PathBuf::from("out")
    }
}

/// Tuned Gaussian hyperparameters `(σ₁², σ₂², λ)` for the synthetic benchmark.
pub fn tuned_kernel(family: KernelFamily, mode: PairMode, horizon: usize) -> Option<([f64; 2], f64)> {
    use KernelFamily::*;
    use PairMode::*;
    Some(match (family, mode, horizon) {
        (Direct, Iid, 5) => ([0.772, 1.572], 3.004e-8),
        (Direct, Iid, 10) => ([0.986, 0.914], 4.615e-8),
        (Direct, Iid, 15) => ([1.282, 1.416], 2.791e-7),
        (Direct, Dependent, 5) => ([0.917, 1.187], 1.645e-8),
        (Direct, Dependent, 10) => ([1.189, 0.981], 1.749e-7),
        (Direct, Dependent, 15) => ([0.599, 0.401], 0.001),
        (Dp, Iid, 5) => ([0.596, 0.361], 1.456e-6),
        (Dp, Iid, 10) => ([0.556, 0.652], 2.038e-6),
        (Dp, Iid, 15) => ([0.472, 0.290], 2.294e-7),
        (Dp, Dependent, 5) => ([0.477, 0.444], 9.892e-6),
        (Dp, Dependent, 10) => ([0.408, 0.359], 5.239e-7),
        (Dp, Dependent, 15) => ([0.638, 0.784], 5.162e-7),
        _ => return None,
    })
}

/// A parsed config together with its source location and digest.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: Config,
    pub base_dir: PathBuf,
    pub sha256: String,
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base)
    }

    pub fn from_str(text: &str, base_dir: PathBuf) -> Result<Self, UsageError> {
        let config: Config = toml::from_str(text).map_err(|e| UsageError(format!("invalid config: {e}")))?;
        config.validate()?;
        let sha256 = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(Self { config, base_dir, sha256 })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |m: &str| Err(UsageError(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        if self.methods.is_empty() {
            return bad("methods must be nonempty");
        }
        if self.system.alphas.is_empty() || self.data.horizons.is_empty() {
            return bad("system.alphas and data.horizons must be nonempty");
        }
        if self.data.horizons.contains(&0) {
            return bad("horizons must be positive");
        }
        if self.data.n_traj == 0 || self.data.pairs_per_step == 0 {
            return bad("data.n_traj and data.pairs_per_step must be positive");
        }
        if self.grid.resolution.len() != 2 || self.grid.n_mc == 0 {
            return bad("grid.resolution needs two entries and grid.n_mc must be positive");
        }
        for &a in &self.system.alphas {
            self.synth(a).validate().map_err(|e| UsageError(e.to_string()))?;
        }
        if self.methods.contains(&Method::Barrier) && self.barrier.is_none() {
            return bad("method barrier needs a [barrier] section");
        }
        for m in &self.methods {
            for &t in &self.data.horizons {
                self.kernel(m.kernel_family(), t)?;
            }
        }
        if self.data.n_cal > 0 && self.data.n_cal < self.calibration.bins {
            return bad("data.n_cal must be at least calibration.bins");
        }
        Ok(())
    }

    pub fn synth(&self, alpha: f64) -> SynthParams {
        SynthParams {
            h: self.system.h,
            coupling_gain: self.system.coupling_gain,
            coupling_sharpness: self.system.coupling_sharpness,
            noise_scale: self.system.noise_scale,
            alpha,
        }
    }

    /// Override if present, else the built-in tuned value.
    pub fn kernel(&self, family: KernelFamily, horizon: usize) -> Result<KernelSpec, UsageError> {
        let mode = self.data.pair_mode;
        let found = self
            .kernels
            .iter()
            .find(|k| k.family == family && k.pair_mode == mode && k.horizon == horizon)
            .map(|k| (k.squared_lengthscales.clone(), k.regularizer))
            .or_else(|| tuned_kernel(family, mode, horizon).map(|(s, l)| (s.to_vec(), l)));
        let (sq, lambda) = found.ok_or_else(|| {
            UsageError(format!("no kernel hyperparameters for {family:?}/{mode:?} at T = {horizon}; add a [[kernels]] entry"))
        })?;
        KernelSpec::from_squared_lengthscales(&sq, lambda).map_err(|e| UsageError(e.to_string()))
    }

    /// `N̂ = pairs_per_step · T`.
    pub fn n_pairs(&self, horizon: usize) -> usize {
        self.data.pairs_per_step * horizon
    }
}
