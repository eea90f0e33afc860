//! JSON run configuration. Every field has a default; unknown keys are rejected.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{CoilGeometry, NoiseModel, PhantomSpec};
use crate::pipeline::Method;
use crate::raki::RakiConfig;
use crate::sampling::{caipi_2d, hybrid_mask, uniform_2d, SamplingMask};
use crate::spark::SparkConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// Image matrix `(readout, phase, partition or slice)`.
    pub dims: [usize; 3],
    /// Custom ellipses; the head phantom of matching dimensionality when absent.
    pub spec: Option<PhantomSpec>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [128, 128, 1],
            spec: None,
        }
    }
}

impl PhantomConfig {
    pub fn spec(&self) -> PhantomSpec {
        match &self.spec {
            Some(s) => s.clone(),
            None if self.dims[2] > 1 => PhantomSpec::shepp_logan_3d(),
            None => PhantomSpec::shepp_logan_2d(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-sample standard deviation of the complex noise.
    pub sigma: f64,
    pub seed: u64,
    /// Correlation between coils `i` and `j` is `correlation^|i - j|`.
    pub correlation: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            seed: 1,
            correlation: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn model(&self, n_coils: usize) -> Result<NoiseModel> {
        if !(self.correlation.abs() < 1.0) {
            return Err(Error::Config(format!("noise correlation {} must lie in (-1, 1)", self.correlation)));
        }
        let rho = self.correlation;
        let cov = DMatrix::from_fn(n_coils, n_coils, |i, j| Complex64::new(rho.powi(i.abs_diff(j) as i32), 0.0));
        NoiseModel::new(cov, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Lattice plus a fully sampled ACS block.
    Uniform,
    /// Sheared lattice without ACS.
    Caipi,
    /// ACS block on its own lattice, exterior on `accel`.
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub pattern: Pattern,
    /// `(R_pe, R_pa)`.
    pub accel: [usize; 2],
    /// ACS extents `(phase, partition)`.
    pub acs: [usize; 2],
    /// CAIPI shift (or slice-group FOV shift).
    pub shift: usize,
    /// ACS lattice for the hybrid pattern.
    pub acs_accel: [usize; 2],
    pub elliptical: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            pattern: Pattern::Uniform,
            accel: [4, 1],
            acs: [24, 1],
            shift: 0,
            acs_accel: [1, 1],
            elliptical: false,
        }
    }
}

impl MaskConfig {
    pub fn build(&self, n_pe: usize, n_pa: usize) -> Result<SamplingMask> {
        let [r_pe, r_pa] = self.accel;
        match self.pattern {
            Pattern::Uniform => uniform_2d(n_pe, n_pa, r_pe, r_pa, self.acs[0], self.acs[1]),
            Pattern::Caipi => caipi_2d(n_pe, n_pa, r_pe, r_pa, self.shift),
            Pattern::Hybrid => hybrid_mask(
                n_pe,
                n_pa,
                self.acs[0],
                self.acs[1],
                (self.acs_accel[0], self.acs_accel[1]),
                (r_pe, r_pa),
                self.elliptical,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrappaConfig {
    /// Kernel extents `(readout, phase blocks, partition blocks)`.
    pub taps: [usize; 3],
    pub lambda: f64,
}

impl Default for GrappaConfig {
    fn default() -> Self {
        Self {
            taps: [5, 4, 1],
            lambda: 0.01,
        }
    }
}

impl GrappaConfig {
    pub fn taps(&self) -> (usize, usize, usize) {
        (self.taps[0], self.taps[1], self.taps[2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SenseConfig {
    pub iters: usize,
    pub tol: f64,
}

impl Default for SenseConfig {
    fn default() -> Self {
        Self { iters: 50, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveConfig {
    pub cycles: f64,
    /// Peak PSF phase, radians.
    pub amplitude: f64,
    pub oversample: usize,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            cycles: 6.0,
            amplitude: 8.0,
            oversample: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub replicas: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { replicas: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub phantom: PhantomConfig,
    pub coils: CoilGeometry,
    pub noise: NoiseConfig,
    pub mask: MaskConfig,
    pub method: Method,
    pub grappa: GrappaConfig,
    pub sense: SenseConfig,
    pub wave: WaveConfig,
    pub spark: SparkConfig,
    pub raki: RakiConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phantom.dims.contains(&0) {
            return Err(Error::Config("phantom dims must be positive".into()));
        }
        if self.wave.oversample == 0 {
            return Err(Error::Config("wave oversample must be positive".into()));
        }
        if self.grappa.taps.contains(&0) {
            return Err(Error::Config("GRAPPA taps must be positive".into()));
        }
        self.spark.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"spark": {"epochz": 3}}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = RunConfig::default();
        cfg.method = Method::Wave;
        cfg.mask.accel = [5, 1];
        cfg.spark.epochs = 7;
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = RunConfig::from_json(r#"{"spark": {"lr": 0.01}, "method": "vc_grappa"}"#).unwrap();
        assert_eq!(cfg.spark.lr, 0.01);
        assert_eq!(cfg.spark.epochs, 200);
        assert_eq!(cfg.method, Method::VcGrappa);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"spark": {"epochs": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"noise": {"correlation": 1.0}}"#).unwrap().noise.model(2).is_err());
    }

    #[test]
    fn correlated_noise_model() {
        let n = NoiseConfig {
            correlation: 0.5,
            ..NoiseConfig::default()
        }
        .model(3)
        .unwrap();
        assert_eq!(n.covariance()[(0, 2)], Complex64::new(0.25, 0.0));
    }
}
