//! Propositional formulae: syntax, semantics, generation and graph form.

mod dataset;
mod formula;
mod generate;
mod graph;
mod parse;

pub use dataset::{read_dataset, write_dataset, DatasetHeader};
pub use formula::{and, not, or, var, Assignment, Formula, NodeType, MAX_VARS};
pub use generate::{
    generate_dataset, generate_dataset_with_stats, generate_formula, generate_formula_with_stats, size_stats,
    GeneratorConfig, SlotStats,
};
pub use graph::{AstGraph, Direction, GraphNode};
pub use parse::parse;

use crate::error::{Error, Result};

/// Largest `n` for which all `2^n` assignments may be enumerated.
pub const MAX_ENUMERATION_VARS: usize = 20;

/// All `2^n` assignments; assignment `i` sets `x_j` to bit `j - 1` of `i`.
pub fn enumerate_assignments(n: usize) -> Result<Vec<Assignment>> {
    if n > MAX_ENUMERATION_VARS {
        return Err(Error::EnumerationOverflow { n, max: MAX_ENUMERATION_VARS });
    }
    Ok((0..1u64 << n).map(|i| Assignment::new(n, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn enumeration_order() {
        let a1: Vec<Vec<bool>> = enumerate_assignments(1).unwrap().iter().map(|a| a.to_bools()).collect();
        assert_eq!(a1, vec![vec![false], vec![true]]);
        let a2: Vec<Vec<bool>> = enumerate_assignments(2).unwrap().iter().map(|a| a.to_bools()).collect();
        assert_eq!(a2, vec![vec![false, false], vec![true, false], vec![false, true], vec![true, true]]);
        assert!(matches!(enumerate_assignments(21), Err(Error::EnumerationOverflow { n: 21, .. })));
    }

    #[test]
    fn evaluation_examples() {
        let f = and(var(1), not(var(2)));
        assert_eq!(f.evaluate(&Assignment::from_bools(&[true, false])), 1);
        let taut = or(var(1), not(var(1)));
        for tau in enumerate_assignments(3).unwrap() {
            assert_eq!(taut.evaluate(&tau), 1);
            assert_eq!(Formula::True.evaluate(&tau), 1);
        }
        // (x1 & x2) | x3 at (0,1,0): both disjuncts false
        let g = or(and(var(1), var(2)), var(3));
        assert_eq!(g.evaluate(&Assignment::from_bools(&[false, true, false])), -1);
    }

    #[test]
    fn semantics_rules_exhaustive() {
        let cfg = GeneratorConfig { n: 5, max_nodes: 12, seed: 9, ..Default::default() };
        let fs = generate_dataset(&cfg, 20).unwrap();
        for n in 1..=5 {
            for tau in enumerate_assignments(n).unwrap() {
                for w in fs.windows(2) {
                    let (f, g) = (&w[0], &w[1]);
                    assert_eq!(not(f.clone()).evaluate(&tau), -f.evaluate(&tau));
                    let both = f.evaluate(&tau) == 1 && g.evaluate(&tau) == 1;
                    assert_eq!(and(f.clone(), g.clone()).evaluate(&tau) == 1, both);
                    let either = f.evaluate(&tau) == 1 || g.evaluate(&tau) == 1;
                    assert_eq!(or(f.clone(), g.clone()).evaluate(&tau) == 1, either);
                }
            }
        }
    }

    #[test]
    fn structure_helpers() {
        let f = and(var(1), not(var(2)));
        assert_eq!(f.node_count(), 4);
        assert_eq!(f.depth(), 2);
        assert_ne!(and(var(1), var(2)), and(var(2), var(1)));
        assert_eq!(f.strip_indexes().to_canonical(), "(VAR & ~VAR)");
        assert_eq!(var(3).strip_indexes(), var(0));
        assert_eq!(f.strip_indexes().strip_indexes(), f.strip_indexes());
        assert_eq!(f.strip_indexes().with_leaf_indexes(&[1, 2]).unwrap(), f);
        assert_eq!(Formula::from_preorder(&f.preorder_types()).unwrap(), f);
        assert!(Formula::from_preorder(&[NodeType::And, NodeType::Var(1)]).is_none());
    }

    fn arbitrary_formula() -> impl Strategy<Value = Formula> {
        (any::<u64>(), 1usize..6).prop_map(|(seed, n)| {
            let cfg = GeneratorConfig { n, seed, ..Default::default() };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            generate_formula(&cfg, &mut rng)
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(f in arbitrary_formula()) {
            let text = f.to_canonical();
            let back = parse(&text, 5).unwrap();
            prop_assert_eq!(&back, &f);
            prop_assert_eq!(back.to_canonical(), text);
        }

        #[test]
        fn graph_is_topological(f in arbitrary_formula()) {
            let g = AstGraph::from_formula(&f, 5).unwrap();
            for &(a, b) in &g.forward_edges {
                prop_assert!(a < b);
            }
            let end_in = g.forward_edges.iter().filter(|e| e.1 == g.virtual_end).count();
            let end_out = g.forward_edges.iter().filter(|e| e.0 == g.virtual_end).count();
            prop_assert_eq!(end_in, f.leaf_count());
            prop_assert_eq!(end_out, 0);
            prop_assert_eq!(g.len(), f.node_count() + 1);
        }
    }
}
