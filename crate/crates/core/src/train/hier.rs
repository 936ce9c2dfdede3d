//! Hierarchical index recovery: predict the variable index of each leaf of
//! an index-free skeleton, given the skeleton and the target's context
//! vector.
//!
//! The semantic term relaxes the discrete indexes. Each leaf holds a
//! distribution over variables, which gives the probability that the leaf
//! is true under every assignment. Probabilities are pushed through the
//! tree as if subtrees were independent (`¬p = 1-p`, `p∧q = pq`,
//! `p∨q = p+q-pq`), mapped to soft valuations `2p-1`, turned into a kernel
//! row against the anchors and projected with the fitted PCA. The projection
//! is affine in the kernel row, so the whole chain is differentiable.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::Linear;
use crate::autodiff::{Adam, AdamConfig, Gradients, ModelParams, NdArray, Tape, Var};
use crate::error::{Error, Result};
use crate::kernel::{signature, ContextVector, KernelMode, PcaModel};
use crate::logic::{AstGraph, Formula, NodeType};
use crate::model::{argmax, Encoder, EncoderCell, EncoderConfig};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, stream_rng};

/// Largest variable count evaluated by enumeration when scoring
/// disagreement; above it a fixed Monte Carlo sample is used.
const EXACT_DISAGREEMENT_VARS: usize = 12;
const DISAGREEMENT_SAMPLES: usize = 4096;

/// Fraction of assignments on which `a` and `b` differ.
pub fn disagreement(a: &Formula, b: &Formula, n: usize) -> Result<f64> {
    let mode = if n <= EXACT_DISAGREEMENT_VARS {
        KernelMode::Exact
    } else {
        KernelMode::MonteCarlo { samples: DISAGREEMENT_SAMPLES, seed: 0 }
    };
    let sa = signature(a, n, mode)?;
    let sb = signature(b, n, mode)?;
    let diff = sa.values.iter().zip(&sb.values).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / sa.values.len() as f64)
}

/// Constant matrices of the relaxed semantic map for one PCA model.
#[derive(Clone, Debug)]
pub struct SoftSemantics {
    n: usize,
    /// `assignments x n`: value of `x_{j+1}` under each assignment.
    bits: NdArray,
    /// `k x assignments`: the projection composed with the anchor
    /// valuations, divided by the assignment count.
    kernel_map: NdArray,
    offset: NdArray,
}

impl SoftSemantics {
    pub fn new(pca: &PcaModel) -> Result<Self> {
        let assignments = pca.mode.assignments(pca.n)?;
        let m = assignments.len();
        let n = pca.n;
        let mut bits = Vec::with_capacity(m * n);
        for a in &assignments {
            bits.extend((1..=n).map(|j| if a.get(j) { 1.0 } else { 0.0 }));
        }
        let anchors = pca.anchor_signatures();
        let (proj, offset) = pca.projection_affine();
        let size = anchors.len();
        let mut map = vec![0.0; pca.k * m];
        for j in 0..pca.k {
            for (l, sig) in anchors.iter().enumerate() {
                let w = proj[j * size + l] / m as f64;
                for (t, &v) in sig.values.iter().enumerate() {
                    map[j * m + t] += w * v as f64;
                }
            }
        }
        Ok(SoftSemantics {
            n,
            bits: NdArray::from_vec(m, n, bits)?,
            kernel_map: NdArray::from_vec(pca.k, m, map)?,
            offset: NdArray::vector(offset),
        })
    }

    /// Context vector of the relaxed formula whose `j`-th variable leaf has
    /// index distribution `softmax(leaf_logits[j])`.
    pub fn context(&self, tape: &mut Tape<'_>, skeleton: &Formula, leaf_logits: &[Var]) -> Result<Var> {
        let mut next = 0;
        let p = self.truth(tape, skeleton, leaf_logits, &mut next)?;
        if next != leaf_logits.len() {
            return Err(Error::Shape {
                op: "soft_context",
                detail: format!("{} leaves, {} logits", next, leaf_logits.len()),
            });
        }
        let s = tape.affine(p, 2.0, -1.0)?;
        let row = tape.const_matmul(self.kernel_map.clone(), s)?;
        let c = tape.constant(self.offset.clone());
        tape.add(row, c)
    }

    fn truth(&self, tape: &mut Tape<'_>, f: &Formula, logits: &[Var], next: &mut usize) -> Result<Var> {
        Ok(match f {
            Formula::True => tape.constant(NdArray::vector(vec![1.0; self.bits.rows()])),
            Formula::Var(_) => {
                let l = *logits
                    .get(*next)
                    .ok_or_else(|| Error::Shape { op: "soft_context", detail: "more leaves than logits".into() })?;
                *next += 1;
                let q = tape.softmax(l)?;
                tape.const_matmul(self.bits.clone(), q)?
            }
            Formula::Not(a) => {
                let p = self.truth(tape, a, logits, next)?;
                tape.affine(p, -1.0, 1.0)?
            }
            Formula::And(a, b) => {
                let p = self.truth(tape, a, logits, next)?;
                let q = self.truth(tape, b, logits, next)?;
                tape.mul(p, q)?
            }
            Formula::Or(a, b) => {
                let p = self.truth(tape, a, logits, next)?;
                let q = self.truth(tape, b, logits, next)?;
                let s = tape.add(p, q)?;
                let pq = tape.mul(p, q)?;
                tape.sub(s, pq)?
            }
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Loss nodes of one formula.
pub struct HierLoss {
    pub loss: Var,
    pub cross_entropy: Var,
    pub semantic: Var,
}

/// `mean CE(leaf logits, true indexes) + λ·‖y - ŷ‖₂`, where `ŷ` is the
/// context vector of the relaxed prediction.
pub fn hier_index_loss(
    tape: &mut Tape<'_>,
    truth: &Formula,
    leaf_logits: &[Var],
    y: &[f64],
    lambda: f64,
    soft: &SoftSemantics,
) -> Result<HierLoss> {
    let idx = truth.leaf_indexes();
    if idx.len() != leaf_logits.len() {
        return Err(Error::Shape {
            op: "hier_index_loss",
            detail: format!("{} leaves, {} logits", idx.len(), leaf_logits.len()),
        });
    }
    let mut ce_terms = Vec::with_capacity(idx.len());
    for (&i, &l) in idx.iter().zip(leaf_logits) {
        if i == 0 || i > soft.n {
            return Err(Error::Data(format!("leaf index x{i} outside 1..={}", soft.n)));
        }
        ce_terms.push(tape.cross_entropy(l, i - 1, None)?);
    }
    let cross_entropy = if ce_terms.is_empty() {
        tape.constant(NdArray::scalar(0.0))
    } else {
        let stacked = tape.concat(&ce_terms)?;
        tape.mean(stacked)?
    };
    let y_hat = soft.context(tape, &truth.strip_indexes(), leaf_logits)?;
    let yv = tape.vector(y.to_vec());
    let diff = tape.sub(yv, y_hat)?;
    let semantic = tape.l2_norm(diff)?;
    let weighted = tape.scale(semantic, lambda)?;
    let loss = tape.add(cross_entropy, weighted)?;
    Ok(HierLoss { loss, cross_entropy, semantic })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierConfig {
    pub hidden_size: usize,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for HierConfig {
    fn default() -> Self {
        HierConfig {
            hidden_size: 32,
            lambda: 0.7,
            lr: 3e-3,
            epochs: 60,
            batch_size: 16,
            seed: 0,
            validation_fraction: 0.2,
        }
    }
}

/// Bidirectional GRU over the skeleton with a shared per-leaf head reading
/// `[forward state ‖ reverse state ‖ y]`.
#[derive(Clone, Debug)]
pub struct IndexRecovery {
    pub n: usize,
    pub context_size: usize,
    pub params: ModelParams,
    encoder: Encoder,
    head: Linear,
}

impl IndexRecovery {
    pub fn new(n: usize, hidden: usize, context_size: usize, seed: u64) -> Result<Self> {
        let mut params = ModelParams::new();
        let mut rng = stream_rng(seed, 0);
        let cfg = EncoderConfig {
            cell: EncoderCell::Gru,
            layers: 1,
            gat_heads: Vec::new(),
            bidirectional: true,
            hidden_size: hidden,
            latent_size: 1,
            n,
        };
        let encoder = Encoder::new(&mut params, "index.encoder", &cfg, &mut rng)?;
        let head = Linear::new(&mut params, "index.head", 2 * hidden + context_size, n, &mut rng)?;
        Ok(IndexRecovery { n, context_size, params, encoder, head })
    }

    /// Index logits for every variable leaf of `skeleton`, depth-first.
    pub fn leaf_logits(&self, tape: &mut Tape<'_>, skeleton: &Formula, y: &[f64]) -> Result<Vec<Var>> {
        if y.len() != self.context_size {
            return Err(Error::Shape {
                op: "index_head",
                detail: format!("context of {} for {}", y.len(), self.context_size),
            });
        }
        let stripped = skeleton.strip_indexes();
        let graph = AstGraph::from_formula(&stripped, self.n)?;
        let states = self.encoder.node_states(tape, &graph)?;
        let yv = tape.vector(y.to_vec());
        let mut leaves: Vec<usize> =
            graph.leaves().into_iter().filter(|&v| matches!(graph.nodes[v].ty, NodeType::Var(_))).collect();
        leaves.sort_by_key(|&v| graph.nodes[v].key);
        leaves
            .into_iter()
            .map(|v| {
                let x = tape.concat(&[states[0][v], states[1][v], yv])?;
                self.head.forward(tape, x)
            })
            .collect()
    }

    /// Skeleton with the most likely index at every leaf.
    pub fn predict(&self, skeleton: &Formula, y: &[f64]) -> Result<Formula> {
        let mut tape = Tape::with_params(&self.params);
        let logits = self.leaf_logits(&mut tape, skeleton, y)?;
        let idx: Vec<usize> = logits.iter().map(|&l| argmax(tape.value(l).data()) + 1).collect();
        skeleton.with_leaf_indexes(&idx).ok_or_else(|| Error::Data("leaf count changed".into()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HierReport {
    pub lambda: f64,
    pub epochs: usize,
    /// Mean disagreement on held-out formulae.
    pub disagreement_untrained: f64,
    pub disagreement_random: f64,
    pub disagreement_trained: f64,
    pub train_loss: Vec<f64>,
}

fn mean_disagreement(
    model: &IndexRecovery,
    formulas: &[Formula],
    contexts: &[ContextVector],
    idx: &[usize],
    exec: Execution,
) -> Result<f64> {
    let d = par::try_map_range(exec, idx.len(), |k| {
        let i = idx[k];
        let pred = model.predict(&formulas[i].strip_indexes(), &contexts[i])?;
        disagreement(&pred, &formulas[i], model.n)
    })?;
    Ok(d.iter().sum::<f64>() / idx.len().max(1) as f64)
}

/// Trains an [`IndexRecovery`] head with context vectors from `pca` and
/// reports held-out disagreement before and after, plus a uniformly random
/// index baseline.
pub fn index_recovery_train(
    formulas: &[Formula],
    pca: &PcaModel,
    cfg: &HierConfig,
    exec: Execution,
) -> Result<(IndexRecovery, HierReport)> {
    if formulas.len() < 2 {
        return Err(Error::Data("index recovery needs at least two formulae".into()));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) || cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("invalid index-recovery configuration".into()));
    }
    let n = pca.n;
    let contexts = par::try_map_range(exec, formulas.len(), |i| pca.embed(&formulas[i]))?;
    let soft = SoftSemantics::new(pca)?;
    let (train_idx, val_idx) = super::split_indices(formulas.len(), cfg.validation_fraction.max(0.1), cfg.seed);
    let mut model = IndexRecovery::new(n, cfg.hidden_size, pca.k, cfg.seed)?;
    let untrained = mean_disagreement(&model, formulas, &contexts, &val_idx, exec)?;

    let random = {
        let mut rng = stream_rng(derive_seed(cfg.seed, 7), 0);
        let mut total = 0.0;
        for &i in &val_idx {
            let count = formulas[i].leaf_indexes().len();
            let idx: Vec<usize> = (0..count).map(|_| rng.random_range(1..=n)).collect();
            let guess = formulas[i].with_leaf_indexes(&idx).expect("leaf count matches");
            total += disagreement(&guess, &formulas[i], n)?;
        }
        total / val_idx.len() as f64
    };

    let mut adam = Adam::new(&model.params, AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut stream_rng(derive_seed(cfg.seed, 8), epoch as u64));
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let per_item = par::try_map_range(exec, batch.len(), |k| {
                let i = batch[k];
                let mut tape = Tape::with_params(&model.params);
                let logits = model.leaf_logits(&mut tape, &formulas[i].strip_indexes(), &contexts[i])?;
                let l = hier_index_loss(&mut tape, &formulas[i], &logits, &contexts[i], cfg.lambda, &soft)?;
                let mut g = Gradients::zeros_like(&model.params);
                tape.backward(l.loss, &mut g)?;
                Ok::<_, Error>((g, tape.scalar(l.loss)))
            })?;
            let mut total = Gradients::zeros_like(&model.params);
            for (g, l) in &per_item {
                total.add(g);
                sum += l;
            }
            total.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.params, &total);
        }
        train_loss.push(sum / order.len() as f64);
    }
    let trained = mean_disagreement(&model, formulas, &contexts, &val_idx, exec)?;
    let report = HierReport {
        lambda: cfg.lambda,
        epochs: cfg.epochs,
        disagreement_untrained: untrained,
        disagreement_random: random,
        disagreement_trained: trained,
        train_loss,
    };
    Ok((model, report))
}
