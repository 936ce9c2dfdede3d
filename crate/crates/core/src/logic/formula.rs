use std::fmt;

use serde::{Deserialize, Serialize};

/// Largest variable count a bit-packed [`Assignment`] can hold.
pub const MAX_VARS: usize = 64;

/// Node labels of the AST plus the two structural labels used by the graph
/// encoder and the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    Start,
    End,
    And,
    Or,
    Not,
    /// Variable `x_i`. Index 0 is the anonymous placeholder produced by
    /// [`Formula::strip_indexes`].
    Var(usize),
    True,
}

impl NodeType {
    /// Number of children an AST node of this type carries. Structural
    /// types have none.
    pub fn arity(self) -> usize {
        match self {
            NodeType::And | NodeType::Or => 2,
            NodeType::Not => 1,
            _ => 0,
        }
    }

    /// Size of the one-hot vocabulary for `n` variables:
    /// Start, End, And, Or, Not, x1..xn.
    pub fn vocab_size(n: usize) -> usize {
        n + 5
    }

    /// Position in the one-hot vocabulary. `True` is not part of the learned
    /// vocabulary. The anonymous variable shares the slot of `x1`.
    pub fn vocab_index(self) -> Option<usize> {
        match self {
            NodeType::Start => Some(0),
            NodeType::End => Some(1),
            NodeType::And => Some(2),
            NodeType::Or => Some(3),
            NodeType::Not => Some(4),
            NodeType::Var(0) => Some(5),
            NodeType::Var(i) => Some(4 + i),
            NodeType::True => None,
        }
    }

    /// Inverse of [`NodeType::vocab_index`] for `n` variables.
    pub fn from_vocab_index(index: usize, n: usize) -> Option<NodeType> {
        match index {
            0 => Some(NodeType::Start),
            1 => Some(NodeType::End),
            2 => Some(NodeType::And),
            3 => Some(NodeType::Or),
            4 => Some(NodeType::Not),
            i if i < n + 5 => Some(NodeType::Var(i - 4)),
            _ => None,
        }
    }

    /// Types the constrained decoder may emit: And, Or, Not, x1..xn.
    pub fn generable(n: usize) -> Vec<NodeType> {
        let mut out = vec![NodeType::And, NodeType::Or, NodeType::Not];
        out.extend((1..=n).map(NodeType::Var));
        out
    }

    pub fn is_operator(self) -> bool {
        matches!(self, NodeType::And | NodeType::Or | NodeType::Not)
    }

    pub fn is_structural(self) -> bool {
        matches!(self, NodeType::Start | NodeType::End)
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeType::Start => write!(f, "START"),
            NodeType::End => write!(f, "END"),
            NodeType::And => write!(f, "&"),
            NodeType::Or => write!(f, "|"),
            NodeType::Not => write!(f, "~"),
            NodeType::Var(0) => write!(f, "VAR"),
            NodeType::Var(i) => write!(f, "x{i}"),
            NodeType::True => write!(f, "1"),
        }
    }
}

/// Immutable AST of a propositional formula.
///
/// The derived equality is structural: variable indexes and child order
/// both matter.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Formula {
    True,
    Var(usize),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
}

pub fn var(i: usize) -> Formula {
    Formula::Var(i)
}

pub fn not(a: Formula) -> Formula {
    Formula::Not(Box::new(a))
}

pub fn and(a: Formula, b: Formula) -> Formula {
    Formula::And(Box::new(a), Box::new(b))
}

pub fn or(a: Formula, b: Formula) -> Formula {
    Formula::Or(Box::new(a), Box::new(b))
}

impl Formula {
    pub fn node_type(&self) -> NodeType {
        match self {
            Formula::True => NodeType::True,
            Formula::Var(i) => NodeType::Var(*i),
            Formula::Not(_) => NodeType::Not,
            Formula::And(..) => NodeType::And,
            Formula::Or(..) => NodeType::Or,
        }
    }

    pub fn children(&self) -> Vec<&Formula> {
        match self {
            Formula::True | Formula::Var(_) => Vec::new(),
            Formula::Not(a) => vec![a],
            Formula::And(a, b) | Formula::Or(a, b) => vec![a, b],
        }
    }

    /// Builds a node from its type and children. Returns `None` when the
    /// child count does not match the arity or the type is structural.
    pub fn from_parts(ty: NodeType, mut children: Vec<Formula>) -> Option<Formula> {
        if ty.is_structural() || children.len() != ty.arity() {
            return None;
        }
        Some(match ty {
            NodeType::True => Formula::True,
            NodeType::Var(i) => Formula::Var(i),
            NodeType::Not => not(children.pop()?),
            NodeType::And => {
                let b = children.pop()?;
                and(children.pop()?, b)
            }
            NodeType::Or => {
                let b = children.pop()?;
                or(children.pop()?, b)
            }
            NodeType::Start | NodeType::End => unreachable!(),
        })
    }

    /// Rebuilds a formula from its depth-first (pre-order, left child first)
    /// type sequence. Fails unless the sequence describes exactly one tree.
    pub fn from_preorder(types: &[NodeType]) -> Option<Formula> {
        fn build(types: &[NodeType], pos: &mut usize) -> Option<Formula> {
            let ty = *types.get(*pos)?;
            *pos += 1;
            if ty.is_structural() {
                return None;
            }
            let mut children = Vec::with_capacity(ty.arity());
            for _ in 0..ty.arity() {
                children.push(build(types, pos)?);
            }
            Formula::from_parts(ty, children)
        }
        let mut pos = 0;
        let f = build(types, &mut pos)?;
        (pos == types.len()).then_some(f)
    }

    /// Node types in depth-first order, left child first.
    pub fn preorder_types(&self) -> Vec<NodeType> {
        let mut out = Vec::with_capacity(self.node_count());
        let mut stack = vec![self];
        while let Some(f) = stack.pop() {
            out.push(f.node_type());
            match f {
                Formula::Not(a) => stack.push(a),
                Formula::And(a, b) | Formula::Or(a, b) => {
                    stack.push(b);
                    stack.push(a);
                }
                _ => {}
            }
        }
        out
    }

    /// Number of AST nodes (no virtual nodes).
    pub fn node_count(&self) -> usize {
        match self {
            Formula::True | Formula::Var(_) => 1,
            Formula::Not(a) => 1 + a.node_count(),
            Formula::And(a, b) | Formula::Or(a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            Formula::True | Formula::Var(_) => 0,
            Formula::Not(a) => 1 + a.depth(),
            Formula::And(a, b) | Formula::Or(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.preorder_types().iter().filter(|t| t.arity() == 0).count()
    }

    /// Largest variable index used, 0 if none.
    pub fn max_var(&self) -> usize {
        match self {
            Formula::True => 0,
            Formula::Var(i) => *i,
            Formula::Not(a) => a.max_var(),
            Formula::And(a, b) | Formula::Or(a, b) => a.max_var().max(b.max_var()),
        }
    }

    /// Variable indexes of the leaves, depth-first.
    pub fn leaf_indexes(&self) -> Vec<usize> {
        self.preorder_types()
            .into_iter()
            .filter_map(|t| match t {
                NodeType::Var(i) => Some(i),
                _ => None,
            })
            .collect()
    }

    /// Replaces every variable by the anonymous placeholder.
    pub fn strip_indexes(&self) -> Formula {
        self.map_vars(&mut |_| 0)
    }

    /// Assigns variable indexes to the leaves in depth-first order.
    /// Returns `None` if the number of indexes differs from the leaf count.
    pub fn with_leaf_indexes(&self, indexes: &[usize]) -> Option<Formula> {
        if indexes.len() != self.leaf_indexes().len() {
            return None;
        }
        let mut it = indexes.iter();
        Some(self.map_vars(&mut |_| *it.next().expect("length checked")))
    }

    fn map_vars(&self, f: &mut impl FnMut(usize) -> usize) -> Formula {
        match self {
            Formula::True => Formula::True,
            Formula::Var(i) => Formula::Var(f(*i)),
            Formula::Not(a) => not(a.map_vars(f)),
            Formula::And(a, b) => {
                let a = a.map_vars(f);
                and(a, b.map_vars(f))
            }
            Formula::Or(a, b) => {
                let a = a.map_vars(f);
                or(a, b.map_vars(f))
            }
        }
    }

    /// Valuation under `tau`: `+1` if satisfied, `-1` otherwise.
    pub fn evaluate(&self, tau: &Assignment) -> i8 {
        if self.holds(tau) {
            1
        } else {
            -1
        }
    }

    /// Boolean satisfaction under `tau`.
    pub fn holds(&self, tau: &Assignment) -> bool {
        match self {
            Formula::True => true,
            Formula::Var(i) => tau.get(*i),
            Formula::Not(a) => !a.holds(tau),
            Formula::And(a, b) => a.holds(tau) && b.holds(tau),
            Formula::Or(a, b) => a.holds(tau) || b.holds(tau),
        }
    }

    /// Fully parenthesized canonical text. Equal strings iff structurally
    /// equal formulae.
    pub fn to_canonical(&self) -> String {
        let mut s = String::new();
        self.write_canonical(&mut s);
        s
    }

    fn write_canonical(&self, out: &mut String) {
        match self {
            Formula::True => out.push('1'),
            Formula::Var(0) => out.push_str("VAR"),
            Formula::Var(i) => {
                out.push('x');
                out.push_str(&i.to_string());
            }
            Formula::Not(a) => {
                out.push('~');
                a.write_canonical(out);
            }
            Formula::And(a, b) | Formula::Or(a, b) => {
                let op = if matches!(self, Formula::And(..)) { " & " } else { " | " };
                out.push('(');
                a.write_canonical(out);
                out.push_str(op);
                b.write_canonical(out);
                out.push(')');
            }
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical())
    }
}

/// Truth values of `x1..xn`, bit `j-1` holding `x_j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Assignment {
    n: usize,
    bits: u64,
}

impl Assignment {
    pub fn new(n: usize, bits: u64) -> Self {
        assert!(n <= MAX_VARS, "assignment over {n} variables exceeds {MAX_VARS}");
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        Assignment { n, bits: bits & mask }
    }

    pub fn from_bools(values: &[bool]) -> Self {
        let bits = values.iter().enumerate().fold(0u64, |acc, (j, &b)| acc | ((b as u64) << j));
        Assignment::new(values.len(), bits)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// Truth value of `x_i` (1-based). Out-of-range variables read false.
    pub fn get(&self, i: usize) -> bool {
        i >= 1 && i <= self.n && (self.bits >> (i - 1)) & 1 == 1
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (1..=self.n).map(|i| self.get(i)).collect()
    }
}
