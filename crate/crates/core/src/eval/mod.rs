//! Measurement protocols: reconstruction accuracy, prior validity,
//! uniqueness and novelty, CVAE semantic metrics, random-pool baselines and
//! slerp interpolation.
//!
//! Every work item (formula, latent draw, context vector) gets its own RNG
//! stream derived from the protocol seed and the item index, so results are
//! identical under sequential and parallel execution.

mod slerp;

use std::collections::{BTreeMap, HashSet};

use indexmap::IndexMap;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{signatures, ContextVector, KernelMode, PcaModel};
use crate::logic::{generate_dataset, Formula, GeneratorConfig, MAX_ENUMERATION_VARS};
use crate::model::{Autoencoder, DecodeMode, DecodeTrace, Gaussian, ModelMode};
use crate::par::{self, Execution};
use crate::rng::stream_rng;

pub use slerp::{
    node_edit_count, random_same_norm, slerp, slerp_interpolate, SlerpConfig, SlerpPoint, SlerpResult, MIN_SLERP_ANGLE,
};

/// Named metrics, counts and protocol parameters of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub protocol: String,
    pub metrics: IndexMap<String, f64>,
    pub counts: IndexMap<String, usize>,
    pub parameters: serde_json::Value,
}

impl EvalReport {
    pub fn new(protocol: &str, parameters: serde_json::Value) -> Self {
        EvalReport { protocol: protocol.into(), metrics: IndexMap::new(), counts: IndexMap::new(), parameters }
    }

    pub fn metric(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.into(), value);
        self
    }

    pub fn count(mut self, name: &str, value: usize) -> Self {
        self.counts.insert(name.into(), value);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `kind,name,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,name,value\n");
        for (k, v) in &self.metrics {
            s.push_str(&format!("metric,{k},{v}\n"));
        }
        for (k, v) in &self.counts {
            s.push_str(&format!("count,{k},{v}\n"));
        }
        s
    }
}

/// Most frequent valid formula among `traces`; ties go to the smallest
/// canonical string. `None` if no trace is valid.
pub fn modal_formula(traces: &[DecodeTrace]) -> Option<Formula> {
    let mut counts: BTreeMap<String, (usize, &Formula)> = BTreeMap::new();
    for f in traces.iter().filter_map(|t| t.formula.as_ref()) {
        counts.entry(f.to_canonical()).or_insert((0, f)).0 += 1;
    }
    let mut best: Option<(usize, &Formula)> = None;
    // ascending key order, so a strict comparison keeps the first tied key
    for (count, f) in counts.values() {
        if best.is_none_or(|(c, _)| *count > c) {
            best = Some((*count, f));
        }
    }
    best.map(|(_, f)| f.clone())
}

fn check_contexts<M: Autoencoder + ?Sized>(model: &M, count: usize, contexts: Option<&[ContextVector]>) -> Result<()> {
    match (model.mode(), contexts) {
        (ModelMode::Cvae, None) => Err(Error::Config("a CVAE model needs context vectors".into())),
        (ModelMode::Cvae, Some(c)) if c.len() != count => {
            Err(Error::Data(format!("{} context vectors for {count} formulae", c.len())))
        }
        _ => Ok(()),
    }
}

fn ctx(contexts: Option<&[ContextVector]>, i: usize) -> Option<&[f64]> {
    contexts.map(|c| c[i].as_slice())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AccuracyConfig {
    pub z_samples: usize,
    pub decodes_per_z: usize,
    pub seed: u64,
}

impl Default for AccuracyConfig {
    fn default() -> Self {
        AccuracyConfig { z_samples: 10, decodes_per_z: 10, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyResult {
    pub accuracy: f64,
    pub most_frequent_accuracy: f64,
    /// Fraction of matching decodes for each formula.
    pub per_formula: Vec<f64>,
    pub decodes_per_formula: usize,
}

impl AccuracyResult {
    pub fn report(&self, cfg: &AccuracyConfig) -> EvalReport {
        EvalReport::new("accuracy", serde_json::to_value(cfg).unwrap_or_default())
            .metric("accuracy", self.accuracy)
            .metric("most_frequent_accuracy", self.most_frequent_accuracy)
            .count("formulae", self.per_formula.len())
            .count("decodes_per_formula", self.decodes_per_formula)
    }
}

/// Encodes each formula, draws `z_samples` latents from its posterior and
/// decodes each `decodes_per_z` times by sampling.
pub fn reconstruction_accuracy<M: Autoencoder + ?Sized>(
    model: &M,
    test: &[Formula],
    contexts: Option<&[ContextVector]>,
    cfg: &AccuracyConfig,
    exec: Execution,
) -> Result<AccuracyResult> {
    if test.is_empty() {
        return Err(Error::Data("accuracy needs at least one formula".into()));
    }
    check_contexts(model, test.len(), contexts)?;
    let per = cfg.z_samples * cfg.decodes_per_z;
    if per == 0 {
        return Err(Error::Config("z_samples and decodes_per_z must be positive".into()));
    }
    let results = par::try_map_range(exec, test.len(), |i| {
        let f = &test[i];
        let y = ctx(contexts, i);
        let q = model.posterior(f, y)?;
        let mut rng = stream_rng(cfg.seed, i as u64);
        let mut traces = Vec::with_capacity(per);
        for _ in 0..cfg.z_samples {
            let z = q.sample(&mut rng);
            for _ in 0..cfg.decodes_per_z {
                traces.push(model.decode(&z, y, DecodeMode::Sample(&mut rng))?);
            }
        }
        let hits = traces.iter().filter(|t| t.formula.as_ref() == Some(f)).count();
        let modal_hit = modal_formula(&traces).as_ref() == Some(f);
        Ok::<_, Error>((hits as f64 / per as f64, modal_hit))
    })?;
    let m = test.len() as f64;
    Ok(AccuracyResult {
        accuracy: results.iter().map(|r| r.0).sum::<f64>() / m,
        most_frequent_accuracy: results.iter().filter(|r| r.1).count() as f64 / m,
        per_formula: results.iter().map(|r| r.0).collect(),
        decodes_per_formula: per,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PriorConfig {
    pub prior_samples: usize,
    pub decodes_per_z: usize,
    pub seed: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { prior_samples: 1000, decodes_per_z: 10, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PriorMetrics {
    pub validity: f64,
    pub uniqueness: f64,
    pub novelty: f64,
    pub total: usize,
    pub valid: usize,
    pub truncated: usize,
    pub distinct: usize,
    pub novel: usize,
}

impl PriorMetrics {
    pub fn report(&self, cfg: &PriorConfig) -> EvalReport {
        EvalReport::new("prior", serde_json::to_value(cfg).unwrap_or_default())
            .metric("validity", self.validity)
            .metric("uniqueness", self.uniqueness)
            .metric("novelty", self.novelty)
            .count("total", self.total)
            .count("valid", self.valid)
            .count("truncated", self.truncated)
            .count("distinct", self.distinct)
            .count("novel", self.novel)
    }
}

/// Validity, uniqueness and novelty of decodes of standard-normal draws.
pub fn prior_generation_metrics<M: Autoencoder + ?Sized>(
    model: &M,
    train_set: &[Formula],
    cfg: &PriorConfig,
    exec: Execution,
) -> Result<PriorMetrics> {
    if model.mode() != ModelMode::Vae {
        return Err(Error::Mismatch("prior generation metrics need a VAE model".into()));
    }
    let prior = model.prior(None)?;
    let per_z = par::try_map_range(exec, cfg.prior_samples, |j| {
        let mut rng = stream_rng(cfg.seed, j as u64);
        let z = prior.sample(&mut rng);
        (0..cfg.decodes_per_z).map(|_| model.decode(&z, None, DecodeMode::Sample(&mut rng))).collect::<Result<Vec<_>>>()
    })?;
    let total = cfg.prior_samples * cfg.decodes_per_z;
    let mut valid = 0;
    let mut truncated = 0;
    let mut distinct = HashSet::new();
    for t in per_z.iter().flatten() {
        truncated += t.truncated as usize;
        if let Some(f) = &t.formula {
            valid += 1;
            distinct.insert(f.to_canonical());
        }
    }
    let train: HashSet<String> = train_set.iter().map(Formula::to_canonical).collect();
    let novel = distinct.iter().filter(|s| !train.contains(*s)).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(PriorMetrics {
        validity: ratio(valid, total),
        uniqueness: ratio(distinct.len(), valid),
        novelty: ratio(novel, distinct.len()),
        total,
        valid,
        truncated,
        distinct: distinct.len(),
        novel,
    })
}

fn kernel_mode_for(n: usize, pca: &PcaModel) -> KernelMode {
    if n <= MAX_ENUMERATION_VARS {
        KernelMode::Exact
    } else {
        pca.mode
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean pairwise kernel over `formulas`, `None` with fewer than two.
fn mean_pairwise_kernel(formulas: &[Formula], n: usize, mode: KernelMode, exec: Execution) -> Result<Option<f64>> {
    if formulas.len() < 2 {
        return Ok(None);
    }
    let sigs = signatures(formulas, n, mode, exec)?;
    let rows = par::map_range(exec, sigs.len(), |i| {
        ((i + 1)..sigs.len()).map(|j| crate::kernel::kernel(&sigs[i], &sigs[j]).expect("same mode")).sum::<f64>()
    });
    let pairs = sigs.len() * (sigs.len() - 1) / 2;
    Ok(Some(rows.iter().sum::<f64>() / pairs as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CvaeConfig {
    pub z_per_y: usize,
    pub decodes_per_z: usize,
    pub seed: u64,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        CvaeConfig { z_per_y: 100, decodes_per_z: 10, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvaeMetrics {
    pub mean_semantic_distance: f64,
    pub mean_kernel_value: f64,
    pub contexts: usize,
    /// Latent draws whose decodes were all truncated.
    pub skipped_z: usize,
    /// Contexts with fewer than two modal formulae, left out of the kernel
    /// average.
    pub contexts_without_kernel: usize,
}

impl CvaeMetrics {
    pub fn report(&self, cfg: &CvaeConfig) -> EvalReport {
        EvalReport::new("cvae-metrics", serde_json::to_value(cfg).unwrap_or_default())
            .metric("mean_semantic_distance", self.mean_semantic_distance)
            .metric("mean_kernel_value", self.mean_kernel_value)
            .count("contexts", self.contexts)
            .count("skipped_z", self.skipped_z)
            .count("contexts_without_kernel", self.contexts_without_kernel)
    }
}

/// For each context vector, decodes `z_per_y` draws from the conditional
/// prior and compares each draw's modal formula with the context.
pub fn cvae_semantic_metrics<M: Autoencoder + ?Sized>(
    model: &M,
    pca: &PcaModel,
    contexts: &[ContextVector],
    cfg: &CvaeConfig,
    exec: Execution,
) -> Result<CvaeMetrics> {
    if model.mode() != ModelMode::Cvae {
        return Err(Error::Mismatch("CVAE metrics need a CVAE model".into()));
    }
    if let Some(fp) = model.pca_fingerprint() {
        if fp != pca.fingerprint() {
            return Err(Error::Mismatch("the PCA model differs from the one the checkpoint was trained with".into()));
        }
    }
    if pca.n != model.n() {
        return Err(Error::Mismatch(format!("PCA over {} variables, model over {}", pca.n, model.n())));
    }
    if contexts.is_empty() {
        return Err(Error::Data("CVAE metrics need at least one context vector".into()));
    }
    let zc = cfg.z_per_y;
    let modal = par::try_map_range(exec, contexts.len() * zc, |item| {
        let y = contexts[item / zc].as_slice();
        let mut rng = stream_rng(cfg.seed, item as u64);
        let prior: Gaussian = model.prior(Some(y))?;
        let z = prior.sample(&mut rng);
        let traces = (0..cfg.decodes_per_z)
            .map(|_| model.decode(&z, Some(y), DecodeMode::Sample(&mut rng)))
            .collect::<Result<Vec<_>>>()?;
        Ok::<_, Error>(modal_formula(&traces))
    })?;
    let mode = kernel_mode_for(pca.n, pca);
    let mut skipped = 0;
    let mut dist_sum = 0.0;
    let mut dist_count = 0usize;
    let mut kern_sum = 0.0;
    let mut kern_count = 0usize;
    for (c, y) in contexts.iter().enumerate() {
        let formulas: Vec<Formula> = modal[c * zc..(c + 1) * zc].iter().flatten().cloned().collect();
        skipped += zc - formulas.len();
        if formulas.is_empty() {
            continue;
        }
        let d = formulas.iter().map(|f| Ok(euclidean(&pca.embed(f)?, y))).collect::<Result<Vec<_>>>()?;
        dist_sum += d.iter().sum::<f64>() / d.len() as f64;
        dist_count += 1;
        if let Some(k) = mean_pairwise_kernel(&formulas, pca.n, mode, Execution::Sequential)? {
            kern_sum += k;
            kern_count += 1;
        }
    }
    let avg = |s: f64, c: usize| if c == 0 { f64::NAN } else { s / c as f64 };
    Ok(CvaeMetrics {
        mean_semantic_distance: avg(dist_sum, dist_count),
        mean_kernel_value: avg(kern_sum, kern_count),
        contexts: contexts.len(),
        skipped_z: skipped,
        contexts_without_kernel: contexts.len() - kern_count,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaselineStats {
    pub mean_pairwise_distance: f64,
    pub mean_pairwise_kernel: f64,
    pub pool_size: usize,
}

impl BaselineStats {
    pub fn report(&self, generator: &GeneratorConfig) -> EvalReport {
        EvalReport::new(
            "baseline",
            serde_json::json!({ "n": generator.n, "p_leaf": generator.p_leaf, "max_nodes": generator.max_nodes, "seed": generator.seed }),
        )
        .metric("mean_pairwise_distance", self.mean_pairwise_distance)
        .metric("mean_pairwise_kernel", self.mean_pairwise_kernel)
        .count("pool_size", self.pool_size)
    }
}

/// Mean pairwise context-vector distance and exact kernel over a pool.
pub fn pool_stats(pool: &[Formula], pca: &PcaModel, exec: Execution) -> Result<BaselineStats> {
    if pool.len() < 2 {
        return Err(Error::Data("a pool needs at least two formulae".into()));
    }
    let ys = par::try_map_range(exec, pool.len(), |i| pca.embed(&pool[i]))?;
    let rows = par::map_range(exec, ys.len(), |i| ((i + 1)..ys.len()).map(|j| euclidean(&ys[i], &ys[j])).sum::<f64>());
    let pairs = pool.len() * (pool.len() - 1) / 2;
    let kernel = mean_pairwise_kernel(pool, pca.n, kernel_mode_for(pca.n, pca), exec)?.expect("two or more formulae");
    Ok(BaselineStats {
        mean_pairwise_distance: rows.iter().sum::<f64>() / pairs as f64,
        mean_pairwise_kernel: kernel,
        pool_size: pool.len(),
    })
}

/// Generates a random pool with `generator` and measures it.
pub fn baseline_pool_stats(
    pool_size: usize,
    generator: &GeneratorConfig,
    pca: &PcaModel,
    exec: Execution,
) -> Result<BaselineStats> {
    if generator.n != pca.n {
        return Err(Error::Mismatch(format!("pool over {} variables, PCA over {}", generator.n, pca.n)));
    }
    pool_stats(&generate_dataset(generator, pool_size)?, pca, exec)
}
