//! Teacher-forced ELBO training with minibatches, Adam and early stopping.

mod hier;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::gaussian_kl_value;
use crate::autodiff::{Adam, AdamConfig, Gradients, Tape};
use crate::error::{Error, Result};
use crate::kernel::ContextVector;
use crate::logic::{AstGraph, Formula};
use crate::model::{DecodeTrace, Gaussian, LogicVae, ModelConfig, ModelMode};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, stream_rng};

pub use hier::{
    disagreement, hier_index_loss, index_recovery_train, HierConfig, HierLoss, HierReport, IndexRecovery, SoftSemantics,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// KL weight.
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Epochs between validation checkpoints.
    pub validate_every: usize,
    /// Checkpoints without sufficient improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub mode: ModelMode,
    #[serde(default)]
    pub hierarchical: bool,
    /// Weight of the semantic term in index recovery.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    /// Smallest validation decrease that resets the patience counter.
    #[serde(default = "default_min_improvement")]
    pub min_improvement: f64,
}

fn default_lambda() -> f64 {
    0.7
}

fn default_validation_fraction() -> f64 {
    0.1
}

fn default_min_improvement() -> f64 {
    1e-3
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 0.001,
            lr: 1e-3,
            batch_size: 32,
            validate_every: 30,
            patience: 3,
            max_epochs: 200,
            seed: 0,
            mode: ModelMode::Vae,
            hierarchical: false,
            lambda: default_lambda(),
            validation_fraction: default_validation_fraction(),
            min_improvement: default_min_improvement(),
        }
    }
}

impl TrainConfig {
    /// Full-size schedule: validation every 30 epochs, patience 3, up to
    /// 1000 epochs.
    pub fn paper() -> Self {
        TrainConfig { max_epochs: 1000, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.validate_every == 0 || self.max_epochs == 0 {
            return bad("batch_size, validate_every and max_epochs must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if !(self.min_improvement >= 0.0) {
            return bad("min_improvement must be non-negative");
        }
        Ok(())
    }
}

/// Mean loss components over a set of formulae.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossStats {
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// Present on validation epochs.
    pub val_loss: Option<f64>,
    pub nll: f64,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model with the best validation parameters.
    pub model: LogicVae,
    pub history: Vec<HistoryRow>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// `NLL + β·KL(q ‖ prior)` from plain values.
pub fn elbo_loss(trace: &DecodeTrace, q: &Gaussian, prior: &Gaussian, beta: f64) -> f64 {
    trace.nll + beta * gaussian_kl_value(&q.mu, &q.logvar, &prior.mu, &prior.logvar)
}

/// Shuffled split into training and validation indexes. At least one
/// formula goes to validation when there are two or more.
pub fn split_indices(len: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut stream_rng(derive_seed(seed, 1), 0));
    let mut n_val = (len as f64 * validation_fraction).round() as usize;
    if validation_fraction > 0.0 && len >= 2 {
        n_val = n_val.clamp(1, len - 1);
    }
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Formulae with their graphs and optional context vectors.
pub struct Corpus<'a> {
    pub formulas: &'a [Formula],
    pub graphs: Vec<AstGraph>,
    pub contexts: Option<&'a [ContextVector]>,
}

impl<'a> Corpus<'a> {
    pub fn new(formulas: &'a [Formula], contexts: Option<&'a [ContextVector]>, n: usize) -> Result<Self> {
        if formulas.is_empty() {
            return Err(Error::Data("training needs at least one formula".into()));
        }
        if let Some(c) = contexts {
            if c.len() != formulas.len() {
                return Err(Error::Data(format!("{} context vectors for {} formulae", c.len(), formulas.len())));
            }
        }
        let graphs = formulas.iter().map(|f| AstGraph::from_formula(f, n)).collect::<Result<_>>()?;
        Ok(Corpus { formulas, graphs, contexts })
    }

    fn context(&self, i: usize) -> Option<&[f64]> {
        self.contexts.map(|c| c[i].as_slice())
    }
}

fn check_mode(model: &LogicVae, corpus: &Corpus<'_>) -> Result<()> {
    match (model.config.mode, corpus.contexts) {
        (ModelMode::Cvae, None) => Err(Error::Config("CVAE training needs context vectors (a PCA model)".into())),
        (ModelMode::Vae, Some(_)) => Err(Error::Config("VAE training takes no context vectors".into())),
        _ => Ok(()),
    }
}

/// Deterministic loss with `z` set to the posterior mean.
pub fn evaluate_loss(
    model: &LogicVae,
    corpus: &Corpus<'_>,
    indices: &[usize],
    beta: f64,
    exec: Execution,
) -> Result<LossStats> {
    check_mode(model, corpus)?;
    let per_item = par::try_map_range(exec, indices.len(), |k| {
        let i = indices[k];
        let mut tape = Tape::with_params(&model.params);
        let p = model.elbo_on(&mut tape, &corpus.formulas[i], &corpus.graphs[i], corpus.context(i), beta, None)?;
        Ok::<_, Error>(LossStats { loss: tape.scalar(p.loss), nll: tape.scalar(p.nll), kl: tape.scalar(p.kl) })
    })?;
    Ok(mean_stats(&per_item))
}

fn mean_stats(items: &[LossStats]) -> LossStats {
    let m = items.len().max(1) as f64;
    let mut s = LossStats::default();
    for it in items {
        s.loss += it.loss;
        s.nll += it.nll;
        s.kl += it.kl;
    }
    LossStats { loss: s.loss / m, nll: s.nll / m, kl: s.kl / m }
}

/// Mean gradient over `batch`, with reparameterization noise drawn from
/// stream `i` of `noise_seed` for formula `i`.
pub fn batch_gradients(
    model: &LogicVae,
    corpus: &Corpus<'_>,
    batch: &[usize],
    beta: f64,
    noise_seed: u64,
    exec: Execution,
) -> Result<(Gradients, LossStats)> {
    let per_item = par::try_map_range(exec, batch.len(), |k| {
        let i = batch[k];
        let mut tape = Tape::with_params(&model.params);
        let mut rng = stream_rng(noise_seed, i as u64);
        let p = model.elbo_on(
            &mut tape,
            &corpus.formulas[i],
            &corpus.graphs[i],
            corpus.context(i),
            beta,
            Some(&mut rng),
        )?;
        let mut g = Gradients::zeros_like(&model.params);
        tape.backward(p.loss, &mut g)?;
        Ok::<_, Error>((g, LossStats { loss: tape.scalar(p.loss), nll: tape.scalar(p.nll), kl: tape.scalar(p.kl) }))
    })?;
    let mut total = Gradients::zeros_like(&model.params);
    let mut stats = Vec::with_capacity(per_item.len());
    for (g, s) in &per_item {
        total.add(g);
        stats.push(*s);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((total, mean_stats(&stats)))
}

/// Trains a freshly initialized model (weights seeded by `cfg.seed`).
pub fn train(
    config: ModelConfig,
    formulas: &[Formula],
    contexts: Option<&[ContextVector]>,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    let model = LogicVae::new(config, cfg.seed)?;
    train_model(model, formulas, contexts, cfg, exec)
}

/// Trains `model` in place of a fresh initialization.
pub fn train_model(
    mut model: LogicVae,
    formulas: &[Formula],
    contexts: Option<&[ContextVector]>,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.mode != model.config.mode {
        return Err(Error::Config(format!(
            "training mode {} does not match the model mode {}",
            cfg.mode, model.config.mode
        )));
    }
    let corpus = Corpus::new(formulas, contexts, model.config.n())?;
    check_mode(&model, &corpus)?;
    let (train_idx, mut val_idx) = split_indices(formulas.len(), cfg.validation_fraction, cfg.seed);
    if val_idx.is_empty() {
        val_idx = train_idx.clone();
    }
    let mut adam = Adam::new(&model.params, AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut history = Vec::new();

    let mut best_val = evaluate_loss(&model, &corpus, &val_idx, cfg.beta, exec)?.loss;
    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut reference = best_val;
    let mut bad_checkpoints = 0;
    let mut stopped_early = false;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let mut order = train_idx.clone();
        order.shuffle(&mut stream_rng(derive_seed(cfg.seed, 2), epoch as u64));
        let noise_seed = derive_seed(derive_seed(cfg.seed, 3), epoch as u64);
        let mut sums = LossStats::default();
        for batch in order.chunks(cfg.batch_size) {
            let (grads, stats) = batch_gradients(&model, &corpus, batch, cfg.beta, noise_seed, exec)?;
            adam.step(&mut model.params, &grads);
            let w = batch.len() as f64;
            sums.loss += stats.loss * w;
            sums.nll += stats.nll * w;
            sums.kl += stats.kl * w;
        }
        let m = order.len() as f64;
        let mut row =
            HistoryRow { epoch, train_loss: sums.loss / m, val_loss: None, nll: sums.nll / m, kl: sums.kl / m };
        if epoch % cfg.validate_every == 0 || epoch == cfg.max_epochs {
            let val = evaluate_loss(&model, &corpus, &val_idx, cfg.beta, exec)?.loss;
            row.val_loss = Some(val);
            if val < best_val {
                best_val = val;
                best_params = model.params.clone();
                best_epoch = epoch;
            }
            if val <= reference - cfg.min_improvement {
                reference = val;
                bad_checkpoints = 0;
            } else {
                bad_checkpoints += 1;
            }
            history.push(row);
            if bad_checkpoints >= cfg.patience && epoch < cfg.max_epochs {
                stopped_early = true;
                break;
            }
        } else {
            history.push(row);
        }
    }
    model.params = best_params;
    Ok(TrainOutcome {
        model,
        history,
        best_val_loss: best_val,
        best_epoch,
        epochs_run,
        stopped_early,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,nll,kl\n");
    for r in history {
        let val = r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:e},{},{:e},{:e}", r.epoch, r.train_loss, val, r.nll, r.kl);
    }
    s
}

/// Writes `config.json`, `history.csv` and the best checkpoint under
/// `dir/checkpoint`.
pub fn save_run(dir: &Path, outcome: &TrainOutcome, cfg: &TrainConfig, extra: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let config = serde_json::json!({
        "train": cfg,
        "model": outcome.model.config,
        "best_val_loss": outcome.best_val_loss,
        "best_epoch": outcome.best_epoch,
        "epochs_run": outcome.epochs_run,
        "stopped_early": outcome.stopped_early,
        "extra": extra,
    });
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    fs::write(dir.join("history.csv"), history_csv(&outcome.history))?;
    outcome.model.save_with(&dir.join("checkpoint"), serde_json::json!({ "train": cfg }))
}
