//! Graph view of a formula consumed by the encoder.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::logic::formula::{Formula, NodeType};

/// Direction in which message passing sweeps the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Root to leaves, ending in the virtual end node.
    Forward,
    /// Virtual end node to leaves to root.
    Reverse,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphNode {
    pub ty: NodeType,
    /// Depth-first (left child first) rank of the node in the formula; the
    /// virtual end node gets the largest key. Stable under reordering of the
    /// storage, and used to fix the summation order over predecessors.
    pub key: usize,
}

/// Ordered directed graph of an AST plus a virtual end node that receives
/// an edge from every leaf. The reverse direction reuses that node as its
/// source and ends at the root.
#[derive(Clone, Debug, PartialEq)]
pub struct AstGraph {
    pub nodes: Vec<GraphNode>,
    pub forward_edges: Vec<(usize, usize)>,
    pub reverse_edges: Vec<(usize, usize)>,
    pub root: usize,
    pub virtual_end: usize,
    pub n: usize,
    forward_preds: Vec<Vec<usize>>,
    reverse_preds: Vec<Vec<usize>>,
}

impl AstGraph {
    /// Builds the graph with nodes in depth-first pre-order, left child
    /// first, and the virtual end node appended last.
    pub fn from_formula(f: &Formula, n: usize) -> Result<AstGraph> {
        if f.max_var() > n {
            return Err(Error::Data(format!("formula {f} uses variables beyond x{n}")));
        }
        if f.preorder_types().contains(&NodeType::True) {
            return Err(Error::Data(format!("formula {f} contains the constant 1, which has no graph encoding")));
        }
        let mut nodes = Vec::with_capacity(f.node_count() + 1);
        let mut edges = Vec::new();
        let mut leaves = Vec::new();
        // (subformula, parent id)
        let mut stack: Vec<(&Formula, Option<usize>)> = vec![(f, None)];
        while let Some((g, parent)) = stack.pop() {
            let id = nodes.len();
            nodes.push(GraphNode { ty: g.node_type(), key: id });
            if let Some(p) = parent {
                edges.push((p, id));
            }
            let children = g.children();
            if children.is_empty() {
                leaves.push(id);
            }
            for c in children.into_iter().rev() {
                stack.push((c, Some(id)));
            }
        }
        let end = nodes.len();
        nodes.push(GraphNode { ty: NodeType::End, key: end });
        edges.extend(leaves.iter().map(|&l| (l, end)));
        Ok(AstGraph::assemble(nodes, edges, 0, end, n))
    }

    fn assemble(
        nodes: Vec<GraphNode>,
        forward_edges: Vec<(usize, usize)>,
        root: usize,
        virtual_end: usize,
        n: usize,
    ) -> Self {
        let reverse_edges: Vec<(usize, usize)> = forward_edges.iter().map(|&(a, b)| (b, a)).collect();
        let mut forward_preds = vec![Vec::new(); nodes.len()];
        let mut reverse_preds = vec![Vec::new(); nodes.len()];
        for &(a, b) in &forward_edges {
            forward_preds[b].push(a);
            reverse_preds[a].push(b);
        }
        for preds in forward_preds.iter_mut().chain(reverse_preds.iter_mut()) {
            preds.sort_by_key(|&p| nodes[p].key);
        }
        AstGraph { nodes, forward_edges, reverse_edges, root, virtual_end, n, forward_preds, reverse_preds }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Predecessors of `v` in the given direction, sorted by key.
    pub fn predecessors(&self, v: usize, dir: Direction) -> &[usize] {
        match dir {
            Direction::Forward => &self.forward_preds[v],
            Direction::Reverse => &self.reverse_preds[v],
        }
    }

    /// Processing order for a sweep: storage order forward, its reversal
    /// backward. Both are topological for their edge sets.
    pub fn topological_order(&self, dir: Direction) -> Vec<usize> {
        match dir {
            Direction::Forward => (0..self.len()).collect(),
            Direction::Reverse => (0..self.len()).rev().collect(),
        }
    }

    /// Node whose final state is read out: the virtual end node forward,
    /// the root in reverse.
    pub fn sink(&self, dir: Direction) -> usize {
        match dir {
            Direction::Forward => self.virtual_end,
            Direction::Reverse => self.root,
        }
    }

    /// One-hot feature of node `v` over the `n + 5` vocabulary. In the
    /// reverse sweep the virtual end node acts as a start node.
    pub fn feature(&self, v: usize, dir: Direction) -> Vec<f64> {
        let mut x = vec![0.0; NodeType::vocab_size(self.n)];
        let ty = if v == self.virtual_end && dir == Direction::Reverse { NodeType::Start } else { self.nodes[v].ty };
        let idx = ty.vocab_index().expect("graph nodes have vocabulary entries");
        x[idx] = 1.0;
        x
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.forward_preds[self.virtual_end].clone()
    }

    /// Returns the same graph with nodes stored in `order` (old ids listed in
    /// their new positions). The order must be topological for the forward
    /// edges; keys travel with their nodes.
    pub fn reordered(&self, order: &[usize]) -> Result<AstGraph> {
        let len = self.len();
        let mut new_id = vec![usize::MAX; len];
        if order.len() != len {
            return Err(Error::Data("reordering must list every node once".into()));
        }
        for (pos, &old) in order.iter().enumerate() {
            if old >= len || new_id[old] != usize::MAX {
                return Err(Error::Data("reordering must list every node once".into()));
            }
            new_id[old] = pos;
        }
        let edges: Vec<(usize, usize)> = self.forward_edges.iter().map(|&(a, b)| (new_id[a], new_id[b])).collect();
        if edges.iter().any(|&(a, b)| a >= b) {
            return Err(Error::Data("reordering is not topological".into()));
        }
        let nodes = order.iter().map(|&old| self.nodes[old].clone()).collect();
        Ok(AstGraph::assemble(nodes, edges, new_id[self.root], new_id[self.virtual_end], self.n))
    }

    /// Graphviz rendering: label = type, colour by class.
    pub fn to_dot(&self, name: &str) -> String {
        let mut s = format!("digraph {name} {{\n");
        self.write_dot_body(&mut s, "");
        s.push_str("}\n");
        s
    }

    pub(crate) fn write_dot_body(&self, out: &mut String, prefix: &str) {
        for (i, node) in self.nodes.iter().enumerate() {
            let color = match node.ty {
                NodeType::And | NodeType::Or | NodeType::Not => "lightblue",
                NodeType::Var(_) | NodeType::True => "palegreen",
                NodeType::Start | NodeType::End => "lightgray",
            };
            let _ = writeln!(out, "  {prefix}n{i} [label=\"{}\", style=filled, fillcolor={color}];", node.ty);
        }
        for &(a, b) in &self.forward_edges {
            let _ = writeln!(out, "  {prefix}n{a} -> {prefix}n{b};");
        }
    }
}
