//! Graph VAE over formula ASTs: encoder, Gaussian posterior, optional
//! conditional prior and the sequential decoder.

mod config;
mod decoder;
mod encoder;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{gaussian_kl, reparameterize, standard_normal_kl, Mlp};
use crate::autodiff::{ModelParams, NdArray, Tape, Var};
use crate::error::{Error, Result};
use crate::logic::{AstGraph, Formula};
use crate::rng::{stream_rng, StreamRng};

pub use config::{EncoderCell, EncoderConfig, ModelConfig, ModelMode, DEFAULT_MAX_V};
pub use decoder::{argmax, teacher_sequence, type_mask, DecodeMode, DecodeStep, DecodeTrace, Decoder};
pub use encoder::{gat_weights, Encoder, UpdateRecord, GAT_SLOPE};

/// Diagonal Gaussian as plain vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl Gaussian {
    pub fn standard(dim: usize) -> Self {
        Gaussian { mu: vec![0.0; dim], logvar: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let eps = crate::autodiff::nn::standard_normal(rng, self.dim());
        self.mu.iter().zip(&self.logvar).zip(eps).map(|((m, lv), e)| m + (0.5 * lv).exp() * e).collect()
    }
}

/// Inference interface the evaluation protocols run against.
pub trait Autoencoder: Sync {
    fn n(&self) -> usize;
    fn latent_size(&self) -> usize;
    fn mode(&self) -> ModelMode;
    /// Approximate posterior of `f`; `y` is required in CVAE mode.
    fn posterior(&self, f: &Formula, y: Option<&[f64]>) -> Result<Gaussian>;
    /// `p(z)` in VAE mode, `p(z | y)` in CVAE mode.
    fn prior(&self, y: Option<&[f64]>) -> Result<Gaussian>;
    fn decode(&self, z: &[f64], y: Option<&[f64]>, mode: DecodeMode<'_>) -> Result<DecodeTrace>;
    /// Fingerprint of the PCA model the context vectors came from.
    fn pca_fingerprint(&self) -> Option<&str> {
        None
    }
}

/// Parameter handles of a model.
#[derive(Clone, Debug)]
struct Layout {
    encoder: Encoder,
    post_mu: Mlp,
    post_logvar: Mlp,
    prior: Option<Mlp>,
    decoder: Decoder,
}

impl Layout {
    fn build(config: &ModelConfig, params: &mut ModelParams, seed: u64) -> Result<Layout> {
        config.validate()?;
        let mut rng = stream_rng(seed, 0);
        let enc = &config.encoder;
        let hs = enc.hidden_size;
        let post_in = enc.output_size() + config.posterior_context();
        Ok(Layout {
            encoder: Encoder::new(params, "encoder", enc, &mut rng)?,
            post_mu: Mlp::new(params, "posterior.mu", post_in, hs, enc.latent_size, &mut rng)?,
            post_logvar: Mlp::new(params, "posterior.logvar", post_in, hs, enc.latent_size, &mut rng)?,
            prior: match config.mode {
                ModelMode::Cvae => {
                    Some(Mlp::new(params, "prior", config.context_size, hs, 2 * enc.latent_size, &mut rng)?)
                }
                ModelMode::Vae => None,
            },
            decoder: Decoder::new(params, "decoder", enc.n, enc.latent_size + config.context_size, hs, &mut rng)?,
        })
    }
}

/// Tape nodes of one teacher-forced pass.
pub struct ElboParts {
    pub loss: Var,
    pub nll: Var,
    pub kl: Var,
    pub trace: DecodeTrace,
}

/// Model configuration plus parameters.
#[derive(Clone, Debug)]
pub struct LogicVae {
    pub config: ModelConfig,
    pub params: ModelParams,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    model: ModelConfig,
    #[serde(default)]
    extra: serde_json::Value,
}

impl LogicVae {
    /// Freshly initialized model; `seed` fixes the initial weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ModelParams::new();
        let layout = Layout::build(&config, &mut params, seed)?;
        Ok(LogicVae { config, params, layout })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.layout.encoder
    }

    fn check_context(&self, y: Option<&[f64]>) -> Result<()> {
        match (self.config.mode, y) {
            (ModelMode::Vae, _) => Ok(()),
            (ModelMode::Cvae, Some(y)) if y.len() == self.config.context_size => Ok(()),
            (ModelMode::Cvae, Some(y)) => Err(Error::Shape {
                op: "context",
                detail: format!("context of length {} for a model expecting {}", y.len(), self.config.context_size),
            }),
            (ModelMode::Cvae, None) => Err(Error::Config("CVAE model needs a context vector".into())),
        }
    }

    fn context_var(&self, tape: &mut Tape<'_>, y: Option<&[f64]>) -> Result<Option<Var>> {
        self.check_context(y)?;
        Ok(match (self.config.mode, y) {
            (ModelMode::Cvae, Some(y)) => Some(tape.vector(y.to_vec())),
            _ => None,
        })
    }

    /// Posterior mean and log-variance nodes for `graph`.
    pub fn posterior_on(&self, tape: &mut Tape<'_>, graph: &AstGraph, y: Option<Var>) -> Result<(Var, Var)> {
        let out_e = self.layout.encoder.encode(tape, graph)?;
        let input = match y {
            Some(y) if self.config.encoder_uses_context => tape.concat(&[out_e, y])?,
            _ => out_e,
        };
        let mu = self.layout.post_mu.forward(tape, input)?;
        let logvar = self.layout.post_logvar.forward(tape, input)?;
        Ok((mu, logvar))
    }

    /// Conditional prior mean and log-variance nodes.
    pub fn prior_on(&self, tape: &mut Tape<'_>, y: Var) -> Result<(Var, Var)> {
        let net = self
            .layout
            .prior
            .as_ref()
            .ok_or_else(|| Error::Config("the conditional prior exists only in CVAE mode".into()))?;
        let out = net.forward(tape, y)?;
        let d = self.config.encoder.latent_size;
        Ok((tape.slice(out, 0, d)?, tape.slice(out, d, d)?))
    }

    fn decoder_input(&self, tape: &mut Tape<'_>, z: Var, y: Option<Var>) -> Result<Var> {
        match y {
            Some(y) => tape.concat(&[z, y]),
            None => Ok(z),
        }
    }

    /// Decodes `z` on `tape`.
    pub fn decode_on(
        &self,
        tape: &mut Tape<'_>,
        z: Var,
        y: Option<Var>,
        mode: DecodeMode<'_>,
    ) -> Result<(DecodeTrace, Var)> {
        let input = self.decoder_input(tape, z, y)?;
        self.layout.decoder.decode(tape, input, self.config.max_v, self.config.constrained, mode)
    }

    /// Teacher-forced loss `NLL + β·KL` for one formula. With `noise` the
    /// latent is reparameterized; without it the posterior mean is used.
    pub fn elbo_on(
        &self,
        tape: &mut Tape<'_>,
        f: &Formula,
        graph: &AstGraph,
        y: Option<&[f64]>,
        beta: f64,
        noise: Option<&mut StreamRng>,
    ) -> Result<ElboParts> {
        let yv = self.context_var(tape, y)?;
        let (mu, logvar) = self.posterior_on(tape, graph, yv)?;
        let z = match noise {
            Some(rng) => reparameterize(tape, mu, logvar, rng)?,
            None => mu,
        };
        let teacher = teacher_sequence(f, self.config.constrained);
        let (trace, nll) = self.decode_on(tape, z, yv, DecodeMode::Teacher(&teacher))?;
        let kl = match yv {
            Some(y) => {
                let (pmu, plv) = self.prior_on(tape, y)?;
                gaussian_kl(tape, mu, logvar, pmu, plv)?
            }
            None => standard_normal_kl(tape, mu, logvar)?,
        };
        let weighted = tape.scale(kl, beta)?;
        let loss = tape.add(nll, weighted)?;
        Ok(ElboParts { loss, nll, kl, trace })
    }

    /// Writes the parameters with the model configuration in the manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.save_with(dir, serde_json::Value::Null)
    }

    /// Like [`LogicVae::save`] with extra metadata stored beside the config.
    pub fn save_with(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        let cfg = CheckpointConfig { model: self.config.clone(), extra };
        self.params.save(dir, serde_json::to_value(cfg)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (params, value) = ModelParams::load(dir)?;
        let cfg: CheckpointConfig = serde_json::from_value(value)?;
        let mut model = LogicVae::new(cfg.model, 0)?;
        model.params.assign_from(&params)?;
        Ok(model)
    }

    /// Loads a checkpoint and refuses it unless it was trained in `mode`.
    pub fn load_expecting(dir: &Path, mode: ModelMode) -> Result<Self> {
        let model = Self::load(dir)?;
        if model.config.mode != mode {
            return Err(Error::Mismatch(format!(
                "checkpoint was trained as {} but the protocol needs {mode}",
                model.config.mode
            )));
        }
        Ok(model)
    }

    /// Stable identifier of the configuration.
    pub fn fingerprint(&self) -> String {
        crate::binio::fingerprint(&serde_json::to_string(&self.config).unwrap_or_default())
    }
}

fn vec_of(tape: &Tape<'_>, v: Var) -> Vec<f64> {
    tape.value(v).data().to_vec()
}

impl Autoencoder for LogicVae {
    fn n(&self) -> usize {
        self.config.n()
    }

    fn latent_size(&self) -> usize {
        self.config.encoder.latent_size
    }

    fn mode(&self) -> ModelMode {
        self.config.mode
    }

    fn posterior(&self, f: &Formula, y: Option<&[f64]>) -> Result<Gaussian> {
        let graph = AstGraph::from_formula(f, self.n())?;
        let mut tape = Tape::with_params(&self.params);
        let yv = self.context_var(&mut tape, y)?;
        let (mu, lv) = self.posterior_on(&mut tape, &graph, yv)?;
        Ok(Gaussian { mu: vec_of(&tape, mu), logvar: vec_of(&tape, lv) })
    }

    fn prior(&self, y: Option<&[f64]>) -> Result<Gaussian> {
        let mut tape = Tape::with_params(&self.params);
        match self.context_var(&mut tape, y)? {
            Some(yv) => {
                let (mu, lv) = self.prior_on(&mut tape, yv)?;
                Ok(Gaussian { mu: vec_of(&tape, mu), logvar: vec_of(&tape, lv) })
            }
            None => Ok(Gaussian::standard(self.latent_size())),
        }
    }

    fn decode(&self, z: &[f64], y: Option<&[f64]>, mode: DecodeMode<'_>) -> Result<DecodeTrace> {
        if z.len() != self.latent_size() {
            return Err(Error::Shape {
                op: "decode",
                detail: format!("latent of length {} for a model expecting {}", z.len(), self.latent_size()),
            });
        }
        let mut tape = Tape::with_params(&self.params);
        let yv = self.context_var(&mut tape, y)?;
        let zv = tape.constant(NdArray::vector(z.to_vec()));
        Ok(self.decode_on(&mut tape, zv, yv, mode)?.0)
    }

    fn pca_fingerprint(&self) -> Option<&str> {
        self.config.pca_fingerprint.as_deref()
    }
}
