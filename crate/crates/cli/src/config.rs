//! Experiment configuration: a sectioned TOML file.
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! endmembers = 6
//! snr_db = 30.0          # `inf` for noiseless data
//!
//! [network]
//! layers_a = 3
//!
//! [red]
//! mu_e = 0.1
//! ```
//!
//! Every key is optional; missing keys take the defaults below.

use std::path::{Path, PathBuf};

use mcu_core::red::{NlmConfig, PatchWeighting, RedConfig, Strength};
use mcu_core::reference::AdmmConfig;
use mcu_core::synth::{EndmemberSource, SynthConfig};
use mcu_core::train::{AdamConfig, LossWeights, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub loss: LossSection,
    pub red: RedSection,
    pub reference: ReferenceSection,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Cube file to unmix instead of generating synthetic data.
    pub cube: Option<PathBuf>,
    /// Signature library for synthetic data; procedural spectra if absent.
    pub library: Option<PathBuf>,
    pub endmembers: usize,
    pub bands: usize,
    pub patch: usize,
    /// Patches per image side; defaults to `patch`.
    pub grid: Option<usize>,
    pub gamma: f64,
    /// Smoothing filter edge; defaults to `patch + 1`.
    pub filter_size: Option<usize>,
    pub filter_variance: f64,
    pub snr_db: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            cube: None,
            library: None,
            endmembers: 6,
            bands: 224,
            patch: 10,
            grid: None,
            gamma: 0.8,
            filter_size: None,
            filter_variance: 2.0,
            snr_db: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub layers_e: usize,
    pub layers_a: usize,
    pub kernels_e: usize,
    pub kernels_a: usize,
    pub ksize_e: usize,
    pub ksize_a: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection { layers_e: 1, layers_a: 3, kernels_e: 128, kernels_a: 128, ksize_e: 5, ksize_a: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection { epochs: 5000, lr: 1e-3, beta1: 0.9, beta2: 0.85, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub alpha5: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        LossSection { alpha1: w.alpha1, alpha2: w.alpha2, alpha3: w.alpha3, alpha4: w.alpha4, alpha5: w.alpha5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedSection {
    pub mu_e: f64,
    pub mu_a: f64,
    /// Outer iterations `T`; defaults to `epochs / inner_epochs`.
    pub outer_iters: Option<usize>,
    pub inner_epochs: usize,
    pub tol: f64,
    pub nlm_patch_radius: usize,
    pub nlm_search_radius: usize,
    /// `h` as a fraction of each channel's value range.
    pub nlm_h_fraction: f64,
    /// Absolute `h`; overrides `nlm_h_fraction` when set.
    pub nlm_h: Option<f64>,
    /// Gaussian patch weighting with this sigma; uniform if absent.
    pub nlm_patch_sigma: Option<f64>,
}

impl Default for RedSection {
    fn default() -> Self {
        RedSection {
            mu_e: 0.1,
            mu_a: 0.1,
            outer_iters: None,
            inner_epochs: 1,
            tol: 1e-4,
            nlm_patch_radius: 1,
            nlm_search_radius: 5,
            nlm_h_fraction: 0.1,
            nlm_h: None,
            nlm_patch_sigma: None,
        }
    }
}

/// Settings of the `admm-ref` mode (delta dictionaries, dense operators).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    pub lambda: f64,
    pub rho: f64,
    pub iters: usize,
    pub ksize_e: usize,
    pub ksize_a: usize,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection { lambda: 1e-3, rho: 1.0, iters: 200, ksize_e: 3, ksize_a: 3 }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let n = &self.network;
        if [n.layers_e, n.layers_a, n.kernels_e, n.kernels_a].contains(&0) {
            return Err(CliError::Config("network layer and kernel counts must be positive".into()));
        }
        if n.ksize_e.is_multiple_of(2) || n.ksize_a.is_multiple_of(2) {
            return Err(CliError::Config("network kernel sizes must be odd".into()));
        }
        if self.data.cube.is_none() {
            self.synth_config(None)?.validate()?;
        } else if self.data.endmembers < 1 {
            return Err(CliError::Config("data.endmembers must be positive".into()));
        }
        let t = self.train_config();
        t.weights.validate()?;
        t.adam.validate()?;
        self.red_config().validate(self.loss.alpha4, self.loss.alpha5)?;
        Ok(())
    }

    /// Synthetic-data settings; `library` supplies the signatures when the
    /// config names a library file.
    pub fn synth_config(&self, library: Option<ndarray::Array2<f64>>) -> Result<SynthConfig, CliError> {
        let d = &self.data;
        let source = match library {
            Some(lib) => EndmemberSource::Library(lib),
            None => EndmemberSource::Procedural,
        };
        Ok(SynthConfig {
            patch: d.patch,
            grid: d.grid.unwrap_or(d.patch),
            gamma: d.gamma,
            endmembers: d.endmembers,
            bands: d.bands,
            filter_size: d.filter_size.unwrap_or(d.patch + 1),
            filter_variance: d.filter_variance,
            snr_db: d.snr_db,
            seed: self.seed,
            source,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        let l = &self.loss;
        TrainConfig {
            adam: AdamConfig { lr: t.lr, beta1: t.beta1, beta2: t.beta2, eps: t.eps },
            weights: LossWeights { alpha1: l.alpha1, alpha2: l.alpha2, alpha3: l.alpha3, alpha4: l.alpha4, alpha5: l.alpha5 },
        }
    }

    pub fn red_config(&self) -> RedConfig {
        let r = &self.red;
        let inner = r.inner_epochs.max(1);
        RedConfig {
            mu_e: r.mu_e,
            mu_a: r.mu_a,
            outer_iters: r.outer_iters.unwrap_or(self.training.epochs.div_ceil(inner)),
            inner_epochs: r.inner_epochs,
            tol: r.tol,
            nlm: NlmConfig {
                patch_radius: r.nlm_patch_radius,
                search_radius: r.nlm_search_radius,
                strength: match r.nlm_h {
                    Some(h) => Strength::Absolute(h),
                    None => Strength::RangeFraction(r.nlm_h_fraction),
                },
                weighting: match r.nlm_patch_sigma {
                    Some(s) => PatchWeighting::Gaussian(s),
                    None => PatchWeighting::Uniform,
                },
            },
        }
    }

    pub fn admm_config(&self) -> AdmmConfig<f64> {
        AdmmConfig::new(self.reference.lambda, self.reference.rho, self.reference.iters)
    }
}
