//! Run configuration file: one JSON document with a section per stage.
//! Missing sections take the desk defaults; unknown keys are rejected.

use std::fs;
use std::path::Path;

use logicvae::kernel::KernelMode;
use logicvae::logic::GeneratorConfig;
use logicvae::model::{EncoderCell, EncoderConfig, DEFAULT_MAX_V};
use logicvae::train::{HierConfig, TrainConfig};
use logicvae::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSettings {
    pub monte_carlo: bool,
    pub samples: usize,
    pub seed: u64,
    pub components: usize,
    /// Formulae taken from the head of the dataset as PCA anchors.
    pub anchors: usize,
}

impl Default for KernelSettings {
    fn default() -> Self {
        KernelSettings { monte_carlo: false, samples: 1000, seed: 0, components: 30, anchors: 200 }
    }
}

impl KernelSettings {
    pub fn mode(&self) -> KernelMode {
        if self.monte_carlo {
            KernelMode::MonteCarlo { samples: self.samples, seed: self.seed }
        } else {
            KernelMode::Exact
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    /// Full encoder configuration; built from the cell preset when absent.
    pub encoder: Option<EncoderConfig>,
    pub cell: EncoderCell,
    pub bidirectional: bool,
    pub constrained: bool,
    pub max_v: usize,
    pub encoder_uses_context: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            encoder: None,
            cell: EncoderCell::Gru,
            bidirectional: true,
            constrained: true,
            max_v: DEFAULT_MAX_V,
            encoder_uses_context: true,
        }
    }
}

impl ModelSettings {
    pub fn encoder_config(&self, n: usize, paper_scale: bool) -> EncoderConfig {
        if let Some(e) = &self.encoder {
            return EncoderConfig { n, ..e.clone() };
        }
        let base = if paper_scale { EncoderConfig::paper(self.cell, n) } else { EncoderConfig::desk(self.cell, n) };
        EncoderConfig { bidirectional: self.bidirectional, ..base }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub kernel: KernelSettings,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub hier: HierConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, paper_scale: bool) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if paper_scale && path.is_none() {
            cfg.train = TrainConfig::paper();
        }
        Ok(cfg)
    }
}
