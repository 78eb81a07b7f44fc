//! Experiment configuration file (TOML, schema version 1).
//!
//! Desk-scale defaults next to the values a full-scale run would use:
//!
//! | key                      | default | full scale |
//! |--------------------------|---------|------------|
//! | `train.epochs`           | 15      | 100        |
//! | `train.batch_size`       | 64      | 256        |
//! | `train.learning_rate`    | 0.03    | 0.001      |
//! | `ensemble.members`       | 5       | 15         |
//! | `dataset.test_fraction`  | 0.2     | 0.2        |
//! | `metrics.alpha`          | 0.05    | 0.05       |
//! | `metrics.ece_bins`       | 15      | 15         |
//!
//! ```toml
//! version = 1
//! seed = 7
//! precision = "f32"        # or "f64"
//! workers = 1
//!
//! [dataset]
//! schemes = ["OOK", "BPSK", "QPSK", "8PSK", "16PSK", "4ASK", "16QAM", "64QAM"]
//! snr_grid_db = [-10, -6, -2, 2, 6, 10, 14, 18]
//! frames_per_cell = 500
//! frame_len = 128
//! fading = "identity"      # or "rayleigh_iid"
//!
//! [ensemble]
//! members = 5
//! systems = ["standalone", "equal_ensemble", "weighted_ensemble"]
//!
//! [attack.pnr_over_snr]
//! pnr_db = 5.0
//!
//! [attack.snr_over_pnr]
//! snr_db = 10.0
//! pnr_db = [-10.0, -5.0, 0.0, 5.0]
//! ```
//!
//! `[model]` takes `conv = [{ filters, kernel = [rows, cols], dropout }]`
//! and `dense = [{ units, dropout }]`; it defaults to the desk architecture.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversarial::Surrogate;
use crate::ensemble::CIConfig;
use crate::error::{Error, Result};
use crate::nncore::{ArchitectureConfig, Precision, TrainConfig};
use crate::seed;
use crate::siggen::{Fading, GeneratorConfig, ModulationScheme};
use crate::uqmetrics::{ECEConfig, ReportConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Standalone,
    EqualEnsemble,
    WeightedEnsemble,
}

impl System {
    pub const ALL: [System; 3] = [System::Standalone, System::EqualEnsemble, System::WeightedEnsemble];

    pub fn name(self) -> &'static str {
        match self {
            System::Standalone => "standalone",
            System::EqualEnsemble => "equal_ensemble",
            System::WeightedEnsemble => "weighted_ensemble",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub schemes: Vec<String>,
    pub snr_grid_db: Vec<f64>,
    pub frames_per_cell: usize,
    pub frame_len: usize,
    #[serde(default)]
    pub fading: Fading,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub members: usize,
    pub systems: Vec<System>,
    /// Member whose gradient attacks an ensemble.
    pub surrogate_member: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            members: 5,
            systems: System::ALL.to_vec(),
            surrogate_member: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub alpha: f64,
    pub ece_bins: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            ece_bins: 15,
        }
    }
}

/// One PNR applied across every SNR of the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnrOverSnr {
    pub pnr_db: f64,
}

/// A PNR sweep on the test frames of one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrOverPnr {
    pub snr_db: f64,
    pub pnr_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub pnr_over_snr: Option<PnrOverSnr>,
    pub snr_over_pnr: Option<SnrOverPnr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ArchitectureConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub attack: AttackSection,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_precision() -> Precision {
    Precision::F32
}

fn default_workers() -> usize {
    1
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn schemes(&self) -> Result<Vec<ModulationScheme>> {
        self.dataset
            .schemes
            .iter()
            .map(|n| ModulationScheme::by_name(n).map_err(|e| bad(format!("dataset.schemes: {e}"))))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(bad(format!(
                "config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.workers == 0 {
            return Err(bad("workers must be >= 1"));
        }
        let d = &self.dataset;
        let schemes = self.schemes()?;
        if schemes.len() < 2 {
            return Err(bad("dataset.schemes needs at least two schemes"));
        }
        if d.snr_grid_db.is_empty() || d.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return Err(bad("dataset.snr_grid_db must be a nonempty list of finite values"));
        }
        if d.frames_per_cell < 2 {
            return Err(bad("dataset.frames_per_cell must be >= 2 to split"));
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(bad("dataset.test_fraction must lie in (0, 1)"));
        }
        self.model
            .layer_specs(d.frame_len, schemes.len())
            .map_err(|e| bad(format!("model: {e}")))?;
        self.train_config(0)
            .validate()
            .map_err(|e| bad(format!("train: {e}")))?;
        let e = &self.ensemble;
        if e.members == 0 {
            return Err(bad("ensemble.members must be >= 1"));
        }
        if e.systems.is_empty() {
            return Err(bad("ensemble.systems must name at least one system"));
        }
        if e.surrogate_member >= e.members {
            return Err(bad("ensemble.surrogate_member must be < ensemble.members"));
        }
        if e.systems.contains(&System::WeightedEnsemble) {
            let mut grid = d.snr_grid_db.clone();
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            if grid.len() < e.members {
                return Err(bad(format!(
                    "weighted_ensemble needs at least {} distinct SNRs, grid has {}",
                    e.members,
                    grid.len()
                )));
            }
        }
        CIConfig::new(self.metrics.alpha).map_err(|e| bad(format!("metrics.alpha: {e}")))?;
        ECEConfig::new(self.metrics.ece_bins).map_err(|e| bad(format!("metrics.ece_bins: {e}")))?;
        if let Some(a) = &self.attack.pnr_over_snr {
            if !a.pnr_db.is_finite() {
                return Err(bad("attack.pnr_over_snr.pnr_db must be finite"));
            }
        }
        if let Some(a) = &self.attack.snr_over_pnr {
            if !d.snr_grid_db.contains(&a.snr_db) {
                return Err(bad(format!(
                    "attack.snr_over_pnr.snr_db {} is not on the grid",
                    a.snr_db
                )));
            }
            if a.pnr_db.is_empty() || a.pnr_db.iter().any(|p| !p.is_finite()) {
                return Err(bad(
                    "attack.snr_over_pnr.pnr_db must be a nonempty list of finite values",
                ));
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        let s = self.seed;
        Seeds {
            master: s,
            dataset: seed::derive(s, &[1]),
            split: seed::derive(s, &[2]),
            standalone: seed::derive(s, &[3]),
            equal_ensemble: seed::derive(s, &[4]),
            weighted_ensemble: seed::derive(s, &[5]),
        }
    }

    pub fn generator(&self) -> Result<GeneratorConfig> {
        Ok(GeneratorConfig {
            schemes: self.schemes()?,
            snr_grid: self.dataset.snr_grid_db.clone(),
            frames_per_cell: self.dataset.frames_per_cell,
            frame_len: self.dataset.frame_len,
            seed: self.seeds().dataset,
            fading: self.dataset.fading,
        })
    }

    pub fn train_config(&self, shuffle_seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            shuffle_seed,
        }
    }

    pub fn report_config(&self) -> Result<ReportConfig> {
        Ok(ReportConfig {
            ci: CIConfig::new(self.metrics.alpha)?,
            ece: ECEConfig::new(self.metrics.ece_bins)?,
        })
    }

    pub fn surrogate_for(&self, system: System) -> Surrogate {
        match system {
            System::Standalone => Surrogate::Standalone,
            _ => Surrogate::Member(self.ensemble.surrogate_member),
        }
    }

    /// Hex SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub dataset: u64,
    pub split: u64,
    pub standalone: u64,
    pub equal_ensemble: u64,
    pub weighted_ensemble: u64,
}
