use logicvae::logic::{
    enumerate_assignments, generate_dataset, generate_dataset_with_stats, not, parse, read_dataset, write_dataset,
    AstGraph, DatasetHeader, Direction, Formula, GeneratorConfig, NodeType,
};
use logicvae::par::Execution;
use proptest::prelude::*;

fn any_formula() -> impl Strategy<Value = Formula> {
    (any::<u64>(), 1usize..=5).prop_map(|(seed, n)| {
        generate_dataset(&GeneratorConfig { n, seed, ..Default::default() }, 1).unwrap().remove(0)
    })
}

fn arity_ok(f: &Formula) -> bool {
    f.children().len() == f.node_type().arity() && f.children().into_iter().all(arity_ok)
}

proptest! {
    #[test]
    fn canonical_text_round_trips(f in any_formula()) {
        prop_assert_eq!(parse(&f.to_canonical(), 5).unwrap(), f);
    }

    #[test]
    fn negation_flips_every_valuation(f in any_formula()) {
        for tau in enumerate_assignments(5).unwrap() {
            prop_assert_eq!(not(f.clone()).evaluate(&tau), -f.evaluate(&tau));
        }
    }

    #[test]
    fn graph_parents_precede_children(f in any_formula()) {
        let g = AstGraph::from_formula(&f, 5).unwrap();
        let order = g.topological_order(Direction::Forward);
        let pos = |v: usize| order.iter().position(|&x| x == v).unwrap();
        for &(a, b) in &g.forward_edges {
            prop_assert!(pos(a) < pos(b));
        }
        prop_assert_eq!(g.leaves().len(), f.leaf_count());
        prop_assert_eq!(g.sink(Direction::Forward), g.virtual_end);
    }

    #[test]
    fn preorder_round_trips(f in any_formula()) {
        prop_assert_eq!(Formula::from_preorder(&f.preorder_types()).unwrap(), f.clone());
        prop_assert!(f.preorder_types().iter().all(|t| !matches!(t, NodeType::True | NodeType::Start | NodeType::End)));
    }
}

#[test]
fn generator_conformance() {
    let cfg = GeneratorConfig { n: 3, p_leaf: 0.4, max_nodes: 30, seed: 2024 };
    let (fs, stats) = generate_dataset_with_stats(&cfg, 10_000, Execution::default()).unwrap();
    assert!(fs.iter().all(|f| arity_ok(f) && f.node_count() <= 30 && f.max_var() <= 3));
    assert!(fs.iter().all(|f| parse(&f.to_canonical(), 3).unwrap() == *f));
    let p = 0.4;
    let se = (p * (1.0 - p) / stats.slots as f64).sqrt();
    assert!((stats.leaf_fraction() - p).abs() <= 3.0 * se, "{} over {} slots", stats.leaf_fraction(), stats.slots);
}

#[test]
fn generation_is_seeded_and_execution_independent() {
    let cfg = GeneratorConfig { seed: 7, ..Default::default() };
    let a = generate_dataset_with_stats(&cfg, 300, Execution::Sequential).unwrap();
    let b = generate_dataset_with_stats(&cfg, 300, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert!(generate_dataset(&GeneratorConfig { p_leaf: 1.1, ..Default::default() }, 1).is_err());
}

#[test]
fn dataset_file_round_trip() {
    let cfg = GeneratorConfig { n: 4, seed: 3, ..Default::default() };
    let fs = generate_dataset(&cfg, 50).unwrap();
    let mut buf = Vec::new();
    write_dataset(&mut buf, &DatasetHeader::from_generator(&cfg, fs.len()), &fs).unwrap();
    let (header, back) = read_dataset(&buf[..], None).unwrap();
    assert_eq!(back, fs);
    assert_eq!(header, DatasetHeader::from_generator(&cfg, fs.len()));
    let mut again = Vec::new();
    write_dataset(&mut again, &header, &back).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn parse_errors_carry_positions() {
    let e = parse("(x1 & )", 3).unwrap_err();
    assert_eq!(e.position, 6);
    assert!(parse("x4", 3).is_err());
    assert!(parse("x1 x2", 3).is_err());
    assert_eq!(parse("x1 | x2 & x3", 3).unwrap().to_canonical(), "(x1 | (x2 & x3))");
    assert_eq!(parse("x1 & x2 & x3", 3).unwrap().to_canonical(), "((x1 & x2) & x3)");
}
