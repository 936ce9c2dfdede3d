use std::sync::atomic::{AtomicUsize, Ordering};

use logicvae::eval::{
    baseline_pool_stats, cvae_semantic_metrics, modal_formula, pool_stats, prior_generation_metrics,
    reconstruction_accuracy, slerp_interpolate, AccuracyConfig, CvaeConfig, PriorConfig, SlerpConfig,
};
use logicvae::kernel::{gram_matrix, kernel_pca_fit, ContextVector, KernelMode, PcaModel};
use logicvae::logic::{and, generate_dataset, not, or, var, Formula, GeneratorConfig};
use logicvae::model::{
    Autoencoder, DecodeMode, DecodeTrace, EncoderCell, EncoderConfig, Gaussian, LogicVae, ModelConfig, ModelMode,
};
use logicvae::par::Execution;
use logicvae::{Error, Result};

fn trace(formula: Option<Formula>) -> DecodeTrace {
    DecodeTrace { steps: vec![], nll: 0.0, truncated: formula.is_none(), formula }
}

/// Encodes a formula as its position in `book` and decodes positions back.
struct Replay {
    book: Vec<Formula>,
    contexts: Vec<ContextVector>,
    mode: ModelMode,
    fingerprint: Option<String>,
}

impl Replay {
    fn vae(book: Vec<Formula>) -> Self {
        Replay { book, contexts: vec![], mode: ModelMode::Vae, fingerprint: None }
    }

    fn slot(&self, z: &[f64]) -> usize {
        (z[0].round().max(0.0) as usize).min(self.book.len() - 1)
    }
}

impl Autoencoder for Replay {
    fn n(&self) -> usize {
        3
    }
    fn latent_size(&self) -> usize {
        2
    }
    fn mode(&self) -> ModelMode {
        self.mode
    }
    fn posterior(&self, f: &Formula, _: Option<&[f64]>) -> Result<Gaussian> {
        let i = self.book.iter().position(|g| g == f).expect("formula in book");
        Ok(Gaussian { mu: vec![i as f64, 1.0], logvar: vec![-60.0, -60.0] })
    }
    fn prior(&self, y: Option<&[f64]>) -> Result<Gaussian> {
        match y {
            Some(y) => {
                let i = self.contexts.iter().position(|c| c.as_slice() == y).expect("known context");
                Ok(Gaussian { mu: vec![i as f64, 0.0], logvar: vec![-60.0, -60.0] })
            }
            None => Ok(Gaussian::standard(2)),
        }
    }
    fn decode(&self, z: &[f64], _: Option<&[f64]>, _: DecodeMode<'_>) -> Result<DecodeTrace> {
        Ok(trace(Some(self.book[self.slot(z)].clone())))
    }
    fn pca_fingerprint(&self) -> Option<&str> {
        self.fingerprint.as_deref()
    }
}

/// Returns `script[k mod len]` on the k-th decode call.
struct Script {
    script: Vec<Option<Formula>>,
    calls: AtomicUsize,
}

impl Autoencoder for Script {
    fn n(&self) -> usize {
        3
    }
    fn latent_size(&self) -> usize {
        1
    }
    fn mode(&self) -> ModelMode {
        ModelMode::Vae
    }
    fn posterior(&self, _: &Formula, _: Option<&[f64]>) -> Result<Gaussian> {
        Ok(Gaussian::standard(1))
    }
    fn prior(&self, _: Option<&[f64]>) -> Result<Gaussian> {
        Ok(Gaussian::standard(1))
    }
    fn decode(&self, _: &[f64], _: Option<&[f64]>, _: DecodeMode<'_>) -> Result<DecodeTrace> {
        let k = self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(trace(self.script[k % self.script.len()].clone()))
    }
}

fn script(items: Vec<Option<Formula>>) -> Script {
    Script { script: items, calls: AtomicUsize::new(0) }
}

fn pool(n: usize, count: usize, seed: u64) -> Vec<Formula> {
    generate_dataset(&GeneratorConfig { n, seed, max_nodes: 12, ..Default::default() }, count).unwrap()
}

fn pca(n: usize) -> PcaModel {
    kernel_pca_fit(&gram_matrix(&pool(n, 40, 77), n, KernelMode::Exact).unwrap(), 5).unwrap()
}

fn tiny_vae() -> LogicVae {
    let enc = EncoderConfig {
        cell: EncoderCell::Gru,
        layers: 1,
        gat_heads: vec![],
        bidirectional: true,
        hidden_size: 8,
        latent_size: 3,
        n: 3,
    };
    LogicVae::new(ModelConfig::vae(enc), 5).unwrap()
}

#[test]
fn modal_ties_go_to_smallest_canonical_string() {
    let t = |f: Formula| trace(Some(f));
    let traces = vec![t(var(2)), t(var(1)), t(var(2)), t(var(1)), trace(None)];
    assert_eq!(modal_formula(&traces), Some(var(1)));
    let traces = vec![t(var(2)), t(var(1)), t(var(2))];
    assert_eq!(modal_formula(&traces), Some(var(2)));
    assert_eq!(modal_formula(&[trace(None)]), None);
}

#[test]
fn perfect_model_scores_one() {
    let book = pool(3, 12, 1);
    let model = Replay::vae(book.clone());
    let acc = reconstruction_accuracy(&model, &book, None, &AccuracyConfig::default(), Execution::default()).unwrap();
    assert_eq!(acc.accuracy, 1.0);
    assert_eq!(acc.most_frequent_accuracy, 1.0);
    assert_eq!(acc.decodes_per_formula, 100);
    let prior = prior_generation_metrics(&model, &book, &PriorConfig::default(), Execution::default()).unwrap();
    assert_eq!(prior.validity, 1.0);
    assert_eq!(prior.total, 10_000);
}

#[test]
fn accuracy_arithmetic() {
    // 87 of 100 decodes right: the formula contributes 0.87
    let mut items = vec![Some(var(1)); 87];
    items.extend(vec![Some(var(2)); 13]);
    let model = script(items);
    let acc =
        reconstruction_accuracy(&model, &[var(1)], None, &AccuracyConfig::default(), Execution::Sequential).unwrap();
    assert!((acc.accuracy - 0.87).abs() < 1e-15);
    assert_eq!(acc.most_frequent_accuracy, 1.0);

    // modal decode right with only 40 individual matches
    let mut items = vec![Some(var(1)); 40];
    for i in 0..60 {
        items.push(Some(if i % 2 == 0 { var(2) } else { var(3) }));
    }
    let model = script(items);
    let acc =
        reconstruction_accuracy(&model, &[var(1)], None, &AccuracyConfig::default(), Execution::Sequential).unwrap();
    assert!((acc.accuracy - 0.40).abs() < 1e-15);
    assert_eq!(acc.most_frequent_accuracy, 1.0);
}

#[test]
fn prior_rates_arithmetic() {
    let phi = and(var(1), var(2));
    let psi = not(var(3));
    let model = script(vec![Some(phi.clone()), Some(phi.clone()), Some(psi)]);
    let cfg = PriorConfig { prior_samples: 1, decodes_per_z: 3, seed: 0 };
    let m = prior_generation_metrics(&model, std::slice::from_ref(&phi), &cfg, Execution::Sequential).unwrap();
    assert_eq!((m.validity, m.uniqueness, m.novelty), (1.0, 2.0 / 3.0, 0.5));

    let model = script(vec![Some(phi.clone()), None, None, Some(phi)]);
    let cfg = PriorConfig { prior_samples: 2, decodes_per_z: 2, seed: 0 };
    let m = prior_generation_metrics(&model, &[], &cfg, Execution::Sequential).unwrap();
    assert_eq!((m.total, m.valid, m.truncated, m.distinct), (4, 2, 2, 1));
    assert_eq!((m.validity, m.uniqueness, m.novelty), (0.5, 0.5, 1.0));
}

#[test]
fn real_model_protocols_are_deterministic_and_bounded() {
    let model = tiny_vae();
    let test = pool(3, 6, 2);
    let cfg = AccuracyConfig { seed: 9, ..Default::default() };
    let a = reconstruction_accuracy(&model, &test, None, &cfg, Execution::Sequential).unwrap();
    let b = reconstruction_accuracy(&model, &test, None, &cfg, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert!(a.per_formula.iter().all(|r| (0.0..=1.0).contains(r)));

    let cfg = PriorConfig { prior_samples: 50, decodes_per_z: 10, seed: 3 };
    let p = prior_generation_metrics(&model, &test, &cfg, Execution::Sequential).unwrap();
    let q = prior_generation_metrics(&model, &test, &cfg, Execution::Parallel).unwrap();
    assert_eq!(p, q);
    assert_eq!(p.total, 500);
    assert_eq!(p.valid + p.truncated, p.total);
    for r in [p.validity, p.uniqueness, p.novelty] {
        assert!((0.0..=1.0).contains(&r));
    }
    assert!(p.uniqueness * p.validity <= 1.0);
    let report = p.report(&cfg);
    assert_eq!(report.to_json().unwrap(), q.report(&cfg).to_json().unwrap());
    assert!(report.to_csv().contains("metric,validity,"));
}

#[test]
fn anchor_replaying_cvae_has_zero_distance_and_unit_kernel() {
    let pca = pca(3);
    let anchors = pool(3, 5, 4);
    let contexts: Vec<ContextVector> = anchors.iter().map(|f| pca.embed(f).unwrap()).collect();
    let model = Replay {
        book: anchors,
        contexts: contexts.clone(),
        mode: ModelMode::Cvae,
        fingerprint: Some(pca.fingerprint()),
    };
    let cfg = CvaeConfig { z_per_y: 10, decodes_per_z: 3, seed: 1 };
    let m = cvae_semantic_metrics(&model, &pca, &contexts, &cfg, Execution::default()).unwrap();
    assert!(m.mean_semantic_distance.abs() < 1e-12);
    assert!((m.mean_kernel_value - 1.0).abs() < 1e-12);
    assert_eq!(m.skipped_z, 0);

    let other = pca.with_components(4).unwrap();
    assert!(matches!(
        cvae_semantic_metrics(&model, &other, &contexts, &cfg, Execution::default()),
        Err(Error::Mismatch(_))
    ));
    let vae = Replay::vae(pool(3, 2, 0));
    assert!(matches!(
        cvae_semantic_metrics(&vae, &pca, &contexts, &cfg, Execution::default()),
        Err(Error::Mismatch(_))
    ));
}

#[test]
fn pool_baselines() {
    let pca = pca(3);
    let same = vec![or(var(1), var(2)); 6];
    let s = pool_stats(&same, &pca, Execution::default()).unwrap();
    assert!(s.mean_pairwise_distance.abs() < 1e-12);
    assert_eq!(s.mean_pairwise_kernel, 1.0);

    let gen = GeneratorConfig { n: 3, seed: 5, ..Default::default() };
    let b = baseline_pool_stats(60, &gen, &pca, Execution::Sequential).unwrap();
    assert_eq!(b, baseline_pool_stats(60, &gen, &pca, Execution::Parallel).unwrap());
    assert!(b.mean_pairwise_kernel >= -1.0 && b.mean_pairwise_kernel < 1.0);
    assert!(b.mean_pairwise_distance > 0.0);
}

#[test]
fn slerp_protocol_shape() {
    let model = tiny_vae();
    let anchor = or(and(var(1), var(2)), not(var(3)));
    let cfg = SlerpConfig::default();
    let r = slerp_interpolate(&model, &anchor, None, &cfg, Execution::default()).unwrap();
    assert_eq!(r.points.len(), 35);
    assert_eq!(r.points[0].t, 0.0);
    assert_eq!(r.points[34].t, 1.0);
    for (a, b) in r.points[0].z.iter().zip(&r.z0) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in r.points[34].z.iter().zip(&r.z1) {
        assert!((a - b).abs() < 1e-12);
    }
    let n0: f64 = r.z0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n1: f64 = r.z1.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((n0 - n1).abs() < 1e-12);
    assert_eq!(r.edits_csv().lines().count(), 36);
    assert_eq!(r.to_dot().matches("->").count(), 34);
    assert_eq!(r, slerp_interpolate(&model, &anchor, None, &cfg, Execution::Sequential).unwrap());
}
