use logicvae::autodiff::{grad_check, NdArray, Tape, GRAD_CHECK_STEP};
use logicvae::logic::{and, generate_dataset, not, or, parse, var, AstGraph, Direction, GeneratorConfig, NodeType};
use logicvae::model::{
    gat_weights, teacher_sequence, type_mask, Autoencoder, DecodeMode, EncoderCell, EncoderConfig, LogicVae,
    ModelConfig, ModelMode,
};
use logicvae::rng::stream_rng;
use logicvae::Error;

const CELLS: [EncoderCell; 3] = [EncoderCell::Gru, EncoderCell::Gcn, EncoderCell::Gat];

fn tiny(cell: EncoderCell, n: usize, bidirectional: bool) -> EncoderConfig {
    let (layers, gat_heads) = match cell {
        EncoderCell::Gat => (2, vec![2, 2]),
        _ => cell.default_layers(),
    };
    EncoderConfig { cell, layers, gat_heads, bidirectional, hidden_size: 5, latent_size: 3, n }
}

#[test]
fn teacher_forcing_reproduces_generated_formulae() {
    let formulas = generate_dataset(&GeneratorConfig { n: 3, seed: 5, ..Default::default() }, 100).unwrap();
    for cell in CELLS {
        for bidirectional in [false, true] {
            let model = LogicVae::new(ModelConfig::vae(tiny(cell, 3, bidirectional)), 1).unwrap();
            for f in &formulas {
                let graph = AstGraph::from_formula(f, 3).unwrap();
                let mut tape = Tape::with_params(&model.params);
                let parts = model.elbo_on(&mut tape, f, &graph, None, 0.001, None).unwrap();
                assert_eq!(parts.trace.steps.len(), f.node_count());
                assert_eq!(parts.trace.formula.as_ref(), Some(f));
                assert!(!parts.trace.truncated);
                assert!(parts.trace.nll >= 0.0);
            }
        }
    }
}

#[test]
fn teacher_example_sequence() {
    let f = and(var(1), not(var(2)));
    assert_eq!(teacher_sequence(&f, true), vec![NodeType::And, NodeType::Var(1), NodeType::Not, NodeType::Var(2)]);
    let model = LogicVae::new(ModelConfig::vae(tiny(EncoderCell::Gru, 2, true)), 0).unwrap();
    let seq = teacher_sequence(&f, true);
    let trace = model.decode(&[0.1, 0.2, 0.3], None, DecodeMode::Teacher(&seq)).unwrap();
    assert_eq!(trace.steps.len(), 4);
    assert_eq!(trace.formula, Some(f));
    // malformed teacher: a binary root with a single child
    let short = [NodeType::And, NodeType::Var(1)];
    assert!(matches!(
        model.decode(&[0.0; 3], None, DecodeMode::Teacher(&short)),
        Err(Error::TeacherExhausted { steps: 2 })
    ));
}

#[test]
fn budget_truncation() {
    let mut cfg = ModelConfig::vae(tiny(EncoderCell::Gcn, 2, false));
    cfg.max_v = 2;
    let mut model = LogicVae::new(cfg, 0).unwrap();
    model.params.zero_all();
    let bias = model.params.id("decoder.types.1.b").unwrap();
    model.params.get_mut(bias).data_mut()[NodeType::And.vocab_index().unwrap()] = 10.0;
    let trace = model.decode(&[0.0; 3], None, DecodeMode::Greedy).unwrap();
    assert!(trace.truncated);
    assert_eq!(trace.steps.len(), 2);
    assert_eq!(trace.formula, None);
}

#[test]
fn greedy_decoding_is_deterministic() {
    let model = LogicVae::new(ModelConfig::vae(tiny(EncoderCell::Gat, 3, true)), 7).unwrap();
    let z = [0.5, -1.0, 0.25];
    assert_eq!(
        model.decode(&z, None, DecodeMode::Greedy).unwrap(),
        model.decode(&z, None, DecodeMode::Greedy).unwrap()
    );
}

#[test]
fn constrained_outputs_always_parse() {
    let mut cfg = ModelConfig::vae(tiny(EncoderCell::Gru, 3, true));
    cfg.max_v = 1_000_000;
    let model = LogicVae::new(cfg, 3).unwrap();
    let mut rng = stream_rng(1, 0);
    for _ in 0..200 {
        let z = model.prior(None).unwrap().sample(&mut rng);
        let trace = model.decode(&z, None, DecodeMode::Sample(&mut rng)).unwrap();
        let f = trace.formula.expect("no truncation with an unbounded budget");
        assert_eq!(parse(&f.to_canonical(), 3).unwrap(), f);
        assert!(trace.steps.iter().all(|s| s.chosen.vocab_index().is_some_and(|i| type_mask(3, true)[i])));
    }
}

#[test]
fn unconstrained_ablation_can_fail_to_parse() {
    let mut cfg = ModelConfig::vae(tiny(EncoderCell::Gru, 3, true));
    cfg.constrained = false;
    let model = LogicVae::new(cfg, 3).unwrap();
    let mut rng = stream_rng(2, 0);
    let mut invalid_untruncated = 0;
    for _ in 0..200 {
        let z = model.prior(None).unwrap().sample(&mut rng);
        let trace = model.decode(&z, None, DecodeMode::Sample(&mut rng)).unwrap();
        if !trace.truncated && trace.formula.is_none() {
            invalid_untruncated += 1;
        }
    }
    assert!(invalid_untruncated > 0);
}

#[test]
fn storage_order_does_not_change_the_encoding() {
    let f = or(and(var(1), var(2)), not(var(3)));
    let g = AstGraph::from_formula(&f, 3).unwrap();
    // Or, And, x1, x2, Not, x3, End  ->  Or, Not, x3, And, x2, x1, End
    let h = g.reordered(&[0, 4, 5, 1, 3, 2, 6]).unwrap();
    for cell in CELLS {
        let model = LogicVae::new(ModelConfig::vae(EncoderConfig::desk(cell, 3)), 2).unwrap();
        let encode = |graph: &AstGraph| {
            let mut tape = Tape::with_params(&model.params);
            let out = model.encoder().encode(&mut tape, graph).unwrap();
            tape.value(out).data().iter().map(|x| x.to_bits()).collect::<Vec<u64>>()
        };
        assert_eq!(encode(&g), encode(&h), "{cell:?}");
    }
}

#[test]
fn sweeps_read_only_updated_predecessors() {
    let formulas = generate_dataset(&GeneratorConfig { n: 3, seed: 9, ..Default::default() }, 20).unwrap();
    for cell in CELLS {
        let model = LogicVae::new(ModelConfig::vae(tiny(cell, 3, true)), 0).unwrap();
        for f in &formulas {
            let g = AstGraph::from_formula(f, 3).unwrap();
            let mut tape = Tape::with_params(&model.params);
            let (_, records) = model.encoder().encode_traced(&mut tape, &g).unwrap();
            let layers = model.encoder().config.layers;
            assert_eq!(records.len(), 2 * layers * g.len());
            for (i, r) in records.iter().enumerate() {
                let dir = if r.reverse { Direction::Reverse } else { Direction::Forward };
                let preds = g.predecessors(r.node, dir);
                assert_eq!(r.reads.len(), preds.len() + 1);
                assert_eq!(r.reads[0], (r.node, r.layer));
                for &(w, version) in &r.reads[1..] {
                    assert!(preds.contains(&w));
                    assert_eq!(version, r.layer + 1);
                    // the predecessor's update in this layer happened earlier
                    let done = records[..i].iter().any(|q| q.reverse == r.reverse && q.layer == r.layer && q.node == w);
                    assert!(done, "node {} read {} before its update", r.node, w);
                }
            }
        }
    }
}

#[test]
fn single_leaf_graph_depends_on_the_leaf_type() {
    let model = LogicVae::new(ModelConfig::vae(tiny(EncoderCell::Gcn, 2, false)), 4).unwrap();
    let enc = |f| {
        let g = AstGraph::from_formula(&f, 2).unwrap();
        assert_eq!(g.len(), 2);
        let mut tape = Tape::with_params(&model.params);
        let out = model.encoder().encode(&mut tape, &g).unwrap();
        tape.value(out).data().to_vec()
    };
    let a = enc(var(1));
    assert_eq!(a, enc(var(1)));
    assert_ne!(a, enc(var(2)));
}

#[test]
fn output_sizes() {
    for cell in CELLS {
        for bidirectional in [false, true] {
            let cfg = tiny(cell, 3, bidirectional);
            let model = LogicVae::new(ModelConfig::vae(cfg.clone()), 0).unwrap();
            let g = AstGraph::from_formula(&and(var(1), var(3)), 3).unwrap();
            let mut tape = Tape::with_params(&model.params);
            let out = model.encoder().encode(&mut tape, &g).unwrap();
            assert_eq!(tape.value(out).rows(), if bidirectional { 10 } else { 5 });
            let q = model.posterior(&and(var(1), var(3)), None).unwrap();
            assert_eq!((q.mu.len(), q.logvar.len()), (3, 3));
        }
    }
}

#[test]
fn gat_attention_normalizes() {
    let a = NdArray::from_vec(1, 3, vec![0.3, -1.2, 2.0]).unwrap();
    let w = gat_weights(&a, &NdArray::vector(vec![1.0, 0.5, -0.5]), &[NdArray::vector(vec![-2.0, 1.0, 0.0])]).unwrap();
    assert_eq!(w.len(), 2);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

#[test]
fn zero_weights_give_standard_posterior_and_prior() {
    let mut model = LogicVae::new(ModelConfig::cvae(tiny(EncoderCell::Gru, 3, true), 4, None), 0).unwrap();
    model.params.zero_all();
    let y = [0.1, 0.2, -0.3, 0.4];
    let q = model.posterior(&or(var(1), var(2)), Some(&y)).unwrap();
    assert_eq!(q.mu, vec![0.0; 3]);
    assert_eq!(q.logvar, vec![0.0; 3]);
    assert_eq!(model.prior(Some(&y)).unwrap(), logicvae::model::Gaussian::standard(3));
    let f = or(var(1), var(2));
    let g = AstGraph::from_formula(&f, 3).unwrap();
    let mut tape = Tape::with_params(&model.params);
    let parts = model.elbo_on(&mut tape, &f, &g, Some(&y), 1.0, None).unwrap();
    assert_eq!(tape.scalar(parts.kl), 0.0);
}

#[test]
fn conditional_prior_requires_cvae_and_context() {
    let vae = LogicVae::new(ModelConfig::vae(tiny(EncoderCell::Gru, 3, true)), 0).unwrap();
    let mut tape = Tape::with_params(&vae.params);
    let y = tape.vector(vec![0.0; 2]);
    assert!(vae.prior_on(&mut tape, y).is_err());
    let cvae = LogicVae::new(ModelConfig::cvae(tiny(EncoderCell::Gru, 3, true), 2, None), 0).unwrap();
    assert!(cvae.prior(None).is_err());
    assert_eq!(cvae.prior(Some(&[0.3, 0.1])).unwrap(), cvae.prior(Some(&[0.3, 0.1])).unwrap());
}

#[test]
fn elbo_gradients_pass_grad_check() {
    let f = and(var(1), not(var(2)));
    let g = AstGraph::from_formula(&f, 2).unwrap();
    for cell in CELLS {
        for mode in [ModelMode::Vae, ModelMode::Cvae] {
            let cfg = match mode {
                ModelMode::Vae => ModelConfig::vae(tiny(cell, 2, true)),
                ModelMode::Cvae => ModelConfig::cvae(tiny(cell, 2, true), 2, None),
            };
            let model = LogicVae::new(cfg, 6).unwrap();
            let y = [0.4, -0.7];
            let y = (mode == ModelMode::Cvae).then_some(&y[..]);
            let report = grad_check(&model.params, GRAD_CHECK_STEP, |tape| {
                let mut rng = stream_rng(3, 3);
                Ok(model.elbo_on(tape, &f, &g, y, 0.5, Some(&mut rng))?.loss)
            })
            .unwrap();
            assert!(report.passes(1e-4), "{cell:?} {mode:?}: {} at {:?}", report.max_rel_error, report.worst);
        }
    }
}

#[test]
fn checkpoint_round_trip_and_mode_guard() {
    let model = LogicVae::new(ModelConfig::cvae(tiny(EncoderCell::Gat, 3, true), 2, Some("abc".into())), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = LogicVae::load_expecting(dir.path(), ModelMode::Cvae).unwrap();
    assert_eq!(loaded.params, model.params);
    assert_eq!(loaded.config, model.config);
    assert!(matches!(LogicVae::load_expecting(dir.path(), ModelMode::Vae), Err(Error::Mismatch(_))));
}
