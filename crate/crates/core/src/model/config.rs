use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logic::MAX_VARS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderCell {
    Gru,
    Gcn,
    Gat,
}

impl EncoderCell {
    /// Sweep count and head counts used unless overridden.
    pub fn default_layers(self) -> (usize, Vec<usize>) {
        match self {
            EncoderCell::Gru => (1, Vec::new()),
            EncoderCell::Gcn => (2, Vec::new()),
            EncoderCell::Gat => (3, vec![3, 3, 4]),
        }
    }
}

impl std::str::FromStr for EncoderCell {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(EncoderCell::Gru),
            "gcn" => Ok(EncoderCell::Gcn),
            "gat" => Ok(EncoderCell::Gat),
            other => Err(Error::Config(format!("unknown encoder cell {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub cell: EncoderCell,
    pub layers: usize,
    #[serde(default)]
    pub gat_heads: Vec<usize>,
    pub bidirectional: bool,
    pub hidden_size: usize,
    pub latent_size: usize,
    pub n: usize,
}

impl EncoderConfig {
    /// Small profile for tests and laptops: hidden 64, latent 16.
    pub fn desk(cell: EncoderCell, n: usize) -> Self {
        let (layers, gat_heads) = cell.default_layers();
        EncoderConfig { cell, layers, gat_heads, bidirectional: true, hidden_size: 64, latent_size: 16, n }
    }

    /// Full-size profile: hidden 250, latent 56.
    pub fn paper(cell: EncoderCell, n: usize) -> Self {
        EncoderConfig { hidden_size: 250, latent_size: 56, ..Self::desk(cell, n) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.cell == EncoderCell::Gat {
            if self.gat_heads.len() != self.layers {
                return Err(Error::Config(format!(
                    "{} GAT head counts given for {} layers",
                    self.gat_heads.len(),
                    self.layers
                )));
            }
            if self.gat_heads.iter().any(|&h| h == 0 || h > self.hidden_size) {
                return Err(Error::Config("GAT head counts must lie in 1..=hidden_size".into()));
            }
        }
        if self.hidden_size == 0 || self.latent_size == 0 {
            return Err(Error::Config("hidden and latent sizes must be positive".into()));
        }
        if self.n == 0 || self.n > MAX_VARS {
            return Err(Error::Config(format!("variable count must lie in 1..={MAX_VARS}")));
        }
        Ok(())
    }

    /// Length of the encoder output.
    pub fn output_size(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden_size
        } else {
            self.hidden_size
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelMode {
    Vae,
    Cvae,
}

impl std::str::FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vae" => Ok(ModelMode::Vae),
            "cvae" => Ok(ModelMode::Cvae),
            other => Err(Error::Config(format!("unknown model mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelMode::Vae => "vae",
            ModelMode::Cvae => "cvae",
        })
    }
}

pub const DEFAULT_MAX_V: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub mode: ModelMode,
    /// Context vector length; 0 in VAE mode.
    #[serde(default)]
    pub context_size: usize,
    /// Whether the posterior also reads the context vector (CVAE only).
    #[serde(default = "yes")]
    pub encoder_uses_context: bool,
    /// Grammar-constrained decoding; `false` is the ablation.
    #[serde(default = "yes")]
    pub constrained: bool,
    #[serde(default = "default_max_v")]
    pub max_v: usize,
    /// Fingerprint of the PCA model that produced the context vectors.
    #[serde(default)]
    pub pca_fingerprint: Option<String>,
}

fn yes() -> bool {
    true
}

fn default_max_v() -> usize {
    DEFAULT_MAX_V
}

impl ModelConfig {
    pub fn vae(encoder: EncoderConfig) -> Self {
        ModelConfig {
            encoder,
            mode: ModelMode::Vae,
            context_size: 0,
            encoder_uses_context: true,
            constrained: true,
            max_v: DEFAULT_MAX_V,
            pca_fingerprint: None,
        }
    }

    pub fn cvae(encoder: EncoderConfig, context_size: usize, pca_fingerprint: Option<String>) -> Self {
        ModelConfig { mode: ModelMode::Cvae, context_size, pca_fingerprint, ..Self::vae(encoder) }
    }

    pub fn n(&self) -> usize {
        self.encoder.n
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        match self.mode {
            ModelMode::Vae if self.context_size != 0 => {
                return Err(Error::Config("VAE mode takes no context vector".into()));
            }
            ModelMode::Cvae if self.context_size == 0 => {
                return Err(Error::Config("CVAE mode needs a positive context size".into()));
            }
            _ => {}
        }
        if self.max_v == 0 {
            return Err(Error::Config("max_v must be positive".into()));
        }
        Ok(())
    }

    /// Context length the posterior networks read.
    pub(crate) fn posterior_context(&self) -> usize {
        if self.encoder_uses_context {
            self.context_size
        } else {
            0
        }
    }
}
