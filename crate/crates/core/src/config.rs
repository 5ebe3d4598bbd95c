//! TOML experiment files. Unknown keys are rejected everywhere.
//!
//! ```toml
//! seed = 1
//! out_dir = "results"
//!
//! [constellation]
//! bits_per_symbol = 3
//!
//! [channel]
//! isi_taps = [0.9, 0.3, -0.1]
//! nl_a3 = 0.15
//! snr_db = 22.0
//! seed = 11
//!
//! [data]
//! n_frames = 2
//! frame_len = 200000
//! # path = "frames.csv"   # read frames instead of simulating them
//!
//! [model]
//! variant = "eq_msex"
//! taps = 17
//!
//! [training]
//! epochs = 200
//!
//! [sweep]
//! nl_a3_values = [0.0, 0.05, 0.1, 0.15]
//! variants = ["eq_mse", "eq_msex", "joint1", "joint2", "linear"]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::trainer::{ExperimentConfig, TrainingParams, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub quiet: bool,
    #[serde(default)]
    pub constellation: ConstellationSection,
    pub channel: ChannelConfig,
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingParams,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationSection {
    pub bits_per_symbol: usize,
}

impl Default for ConstellationSection {
    fn default() -> Self {
        Self { bits_per_symbol: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n_frames: usize,
    pub frame_len: usize,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    #[serde(default = "default_taps")]
    pub taps: usize,
}

fn default_taps() -> usize {
    17
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub nl_a3_values: Vec<f64>,
    #[serde(default = "all_variants")]
    pub variants: Vec<Variant>,
}

fn all_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

impl ConfigFile {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        cfg.experiment().validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        // Relative data paths are taken relative to the config file.
        if let Some(p) = &cfg.data.path {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.data.path = Some(dir.join(p));
                }
            }
        }
        Ok(cfg)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            bits_per_symbol: self.constellation.bits_per_symbol,
            channel: self.channel.clone(),
            taps: self.model.taps,
            variant: self.model.variant,
            training: self.training,
            seed: self.seed,
            n_frames: self.data.n_frames,
            frame_len: self.data.frame_len,
        }
    }
}
