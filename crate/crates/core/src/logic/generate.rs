//! Random formula generation by recursive tree growth.
//!
//! The root is an operator drawn uniformly from {∧, ∨, ¬}. Every child slot
//! then draws from a categorical distribution that gives `p_leaf` to a
//! variable leaf and `(1 - p_leaf) / 3` to each operator. Leaf indexes are
//! uniform on `1..=n`. The growth process is critical at `p_leaf = 0.4`
//! (one expected child per slot), so trees larger than `max_nodes` are
//! discarded and the whole tree is drawn again.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logic::formula::{and, not, or, Formula, MAX_VARS};
use crate::par::{self, Execution};
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub p_leaf: f64,
    pub n: usize,
    pub max_nodes: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { p_leaf: 0.4, n: 3, max_nodes: 30, seed: 0 }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_leaf > 0.0 && self.p_leaf < 1.0) {
            return Err(Error::Config(format!("p_leaf must lie in (0, 1), got {}", self.p_leaf)));
        }
        if self.n == 0 || self.n > MAX_VARS {
            return Err(Error::Config(format!("variable count must lie in 1..={MAX_VARS}, got {}", self.n)));
        }
        if self.max_nodes < 3 {
            return Err(Error::Config(format!("max_nodes must be at least 3, got {}", self.max_nodes)));
        }
        Ok(())
    }
}

/// Tally of categorical draws made for child slots, including draws for
/// trees that were later rejected by the size cap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SlotStats {
    pub slots: u64,
    pub leaves: u64,
    pub rejected_trees: u64,
}

impl SlotStats {
    pub fn leaf_fraction(&self) -> f64 {
        self.leaves as f64 / self.slots.max(1) as f64
    }

    pub fn merge(&mut self, other: &SlotStats) {
        self.slots += other.slots;
        self.leaves += other.leaves;
        self.rejected_trees += other.rejected_trees;
    }
}

#[derive(Clone, Copy)]
enum Draw {
    And,
    Or,
    Not,
    Leaf,
}

/// Draws one formula. The configuration is assumed valid.
pub fn generate_formula<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> Formula {
    generate_formula_with_stats(cfg, rng, &mut SlotStats::default())
}

/// Like [`generate_formula`], recording every slot draw into `stats`.
pub fn generate_formula_with_stats<R: Rng + ?Sized>(
    cfg: &GeneratorConfig,
    rng: &mut R,
    stats: &mut SlotStats,
) -> Formula {
    loop {
        let root = match rng.random_range(0..3) {
            0 => Draw::And,
            1 => Draw::Or,
            _ => Draw::Not,
        };
        let mut count = 1;
        if let Some(f) = grow(root, cfg, rng, &mut count, stats) {
            return f;
        }
        stats.rejected_trees += 1;
    }
}

fn draw_slot<R: Rng + ?Sized>(p_leaf: f64, rng: &mut R, stats: &mut SlotStats) -> Draw {
    stats.slots += 1;
    let u: f64 = rng.random();
    if u < p_leaf {
        stats.leaves += 1;
        return Draw::Leaf;
    }
    let op = (1.0 - p_leaf) / 3.0;
    if u < p_leaf + op {
        Draw::And
    } else if u < p_leaf + 2.0 * op {
        Draw::Or
    } else {
        Draw::Not
    }
}

/// Expands `node`; `None` once the tree outgrows the cap.
fn grow<R: Rng + ?Sized>(
    node: Draw,
    cfg: &GeneratorConfig,
    rng: &mut R,
    count: &mut usize,
    stats: &mut SlotStats,
) -> Option<Formula> {
    match node {
        Draw::Leaf => Some(Formula::Var(rng.random_range(1..=cfg.n))),
        Draw::Not => {
            let child = draw_slot(cfg.p_leaf, rng, stats);
            *count += 1;
            if *count > cfg.max_nodes {
                return None;
            }
            Some(not(grow(child, cfg, rng, count, stats)?))
        }
        Draw::And | Draw::Or => {
            let left = draw_slot(cfg.p_leaf, rng, stats);
            let right = draw_slot(cfg.p_leaf, rng, stats);
            *count += 2;
            if *count > cfg.max_nodes {
                return None;
            }
            let l = grow(left, cfg, rng, count, stats)?;
            let r = grow(right, cfg, rng, count, stats)?;
            Some(if matches!(node, Draw::And) { and(l, r) } else { or(l, r) })
        }
    }
}

/// Draws `count` formulae, formula `i` from stream `i` of `cfg.seed`.
pub fn generate_dataset(cfg: &GeneratorConfig, count: usize) -> Result<Vec<Formula>> {
    Ok(generate_dataset_with_stats(cfg, count, Execution::default())?.0)
}

pub fn generate_dataset_with_stats(
    cfg: &GeneratorConfig,
    count: usize,
    exec: Execution,
) -> Result<(Vec<Formula>, SlotStats)> {
    cfg.validate()?;
    let items = par::map_range(exec, count, |i| {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let mut stats = SlotStats::default();
        let f = generate_formula_with_stats(cfg, &mut rng, &mut stats);
        (f, stats)
    });
    let mut total = SlotStats::default();
    let formulas = items
        .into_iter()
        .map(|(f, s)| {
            total.merge(&s);
            f
        })
        .collect();
    Ok((formulas, total))
}

/// Mean node count and mean depth of a set of formulae.
pub fn size_stats(formulas: &[Formula]) -> (f64, f64) {
    if formulas.is_empty() {
        return (0.0, 0.0);
    }
    let n = formulas.len() as f64;
    let nodes = formulas.iter().map(|f| f.node_count() as f64).sum::<f64>() / n;
    let depth = formulas.iter().map(|f| f.depth() as f64).sum::<f64>() / n;
    (nodes, depth)
}
