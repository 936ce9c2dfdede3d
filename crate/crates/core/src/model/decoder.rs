//! Sequential tree decoder.
//!
//! Nodes are generated depth-first, left child first. Each step predicts a
//! type from the current graph state, then updates the new node's state
//! from its one-hot type and a gated sum over its parent's state. In
//! constrained mode a stack of open child slots decides when the tree is
//! complete, so the only failure is running out of the node budget.

use rand::Rng;
use serde::Serialize;

use crate::autodiff::nn::{GatedSum, GruCell, Linear, Mlp};
use crate::autodiff::{softmax, ModelParams, Tape, Var};
use crate::error::{Error, Result};
use crate::logic::{Formula, NodeType};
use crate::rng::StreamRng;

/// How the decoder picks each node type.
pub enum DecodeMode<'a> {
    Sample(&'a mut StreamRng),
    /// Most likely type; ties go to the smallest vocabulary index.
    Greedy,
    /// Follow the given type sequence and score it.
    Teacher(&'a [NodeType]),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecodeStep {
    /// Masked type distribution over the full vocabulary.
    pub distribution: Vec<f64>,
    pub chosen: NodeType,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecodeTrace {
    pub steps: Vec<DecodeStep>,
    /// Sum of `-log p(chosen)` over the steps.
    pub nll: f64,
    #[serde(serialize_with = "serialize_formula")]
    pub formula: Option<Formula>,
    /// Budget ran out with open slots (constrained) or before an end token
    /// (unconstrained).
    pub truncated: bool,
}

fn serialize_formula<S: serde::Serializer>(f: &Option<Formula>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match f {
        Some(f) => s.serialize_some(&f.to_canonical()),
        None => s.serialize_none(),
    }
}

impl DecodeTrace {
    pub fn is_valid(&self) -> bool {
        self.formula.is_some()
    }
}

/// Types allowed at every step: the generable types when constrained, the
/// whole vocabulary otherwise.
pub fn type_mask(n: usize, constrained: bool) -> Vec<bool> {
    let mut mask = vec![!constrained; NodeType::vocab_size(n)];
    for t in NodeType::generable(n) {
        mask[t.vocab_index().expect("generable types are in the vocabulary")] = true;
    }
    mask
}

/// Teacher sequence for a formula: its pre-order types, followed by an end
/// token for the unconstrained decoder.
pub fn teacher_sequence(f: &Formula, constrained: bool) -> Vec<NodeType> {
    let mut seq = f.preorder_types();
    if !constrained {
        seq.push(NodeType::End);
    }
    seq
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Clone, Debug)]
pub struct Decoder {
    n: usize,
    init: Linear,
    type_mlp: Mlp,
    cell: GruCell,
    agg: GatedSum,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        n: usize,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let vocab = NodeType::vocab_size(n);
        Ok(Decoder {
            n,
            init: Linear::new(params, &format!("{prefix}.init"), input, hidden, rng)?,
            type_mlp: Mlp::new(params, &format!("{prefix}.types"), hidden, hidden, vocab, rng)?,
            cell: GruCell::new(params, &format!("{prefix}.gru"), vocab, hidden, rng)?,
            agg: GatedSum::new(params, &format!("{prefix}.agg"), hidden, hidden, rng)?,
        })
    }

    fn one_hot(&self, tape: &mut Tape<'_>, t: NodeType) -> Var {
        let mut x = vec![0.0; NodeType::vocab_size(self.n)];
        x[t.vocab_index().expect("decoded types are in the vocabulary")] = 1.0;
        tape.vector(x)
    }

    fn node_state(&self, tape: &mut Tape<'_>, t: NodeType, pred: Var) -> Result<Var> {
        let x = self.one_hot(tape, t);
        let m = self.agg.forward(tape, &[pred])?;
        self.cell.forward(tape, x, m)
    }

    /// Decodes from `input` (the latent vector, with the context vector
    /// appended in CVAE mode). Returns the trace and the summed NLL node.
    pub fn decode(
        &self,
        tape: &mut Tape<'_>,
        input: Var,
        max_v: usize,
        constrained: bool,
        mut mode: DecodeMode<'_>,
    ) -> Result<(DecodeTrace, Var)> {
        let mask = type_mask(self.n, constrained);
        let h0 = self.init.forward(tape, input)?;
        let h0 = tape.tanh(h0)?;
        let start_x = self.one_hot(tape, NodeType::Start);
        let h_start = self.cell.forward(tape, start_x, h0)?;

        let mut states = vec![h_start];
        let mut types: Vec<NodeType> = Vec::new();
        let mut steps = Vec::new();
        let mut nll_terms = Vec::new();
        let mut h_g = h_start;
        // (parent state index, open child slots)
        let mut slots: Vec<(usize, usize)> = vec![(0, 1)];
        let mut ended = false;
        let mut truncated = false;

        loop {
            if constrained && slots.is_empty() {
                break;
            }
            if types.len() == max_v {
                truncated = true;
                break;
            }
            let logits = self.type_mlp.forward(tape, h_g)?;
            let probs = softmax(tape.value(logits).data(), Some(&mask));
            let index = match &mut mode {
                DecodeMode::Sample(rng) => sample_index(&probs, *rng),
                DecodeMode::Greedy => argmax(&probs),
                DecodeMode::Teacher(seq) => {
                    let t = seq.get(steps.len()).ok_or(Error::TeacherExhausted { steps: steps.len() })?;
                    t.vocab_index().ok_or_else(|| Error::Data(format!("teacher type {t} has no vocabulary entry")))?
                }
            };
            let t = NodeType::from_vocab_index(index, self.n).expect("index within vocabulary");
            nll_terms.push(tape.cross_entropy(logits, index, Some(&mask))?);
            steps.push(DecodeStep { distribution: probs, chosen: t });

            if !constrained && t == NodeType::End {
                ended = true;
                break;
            }
            let pred = if constrained {
                let top = slots.last_mut().expect("open slot");
                let parent = top.0;
                top.1 -= 1;
                if top.1 == 0 {
                    slots.pop();
                }
                parent
            } else {
                states.len() - 1
            };
            let h = self.node_state(tape, t, states[pred])?;
            states.push(h);
            types.push(t);
            if constrained && t.arity() > 0 {
                slots.push((states.len() - 1, t.arity()));
            }
            h_g = h;
        }

        if let DecodeMode::Teacher(seq) = mode {
            if !truncated && steps.len() != seq.len() {
                return Err(Error::Data(format!(
                    "teacher sequence has {} types but decoding consumed {}",
                    seq.len(),
                    steps.len()
                )));
            }
        }
        let nll = if nll_terms.is_empty() {
            tape.constant(crate::autodiff::NdArray::scalar(0.0))
        } else {
            let stacked = tape.concat(&nll_terms)?;
            tape.sum(stacked)?
        };
        let formula = if truncated || (!constrained && !ended) { None } else { Formula::from_preorder(&types) };
        let trace = DecodeTrace { steps, nll: tape.scalar(nll), formula, truncated };
        Ok((trace, nll))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.5]), 0);
    }

    #[test]
    fn masks() {
        let m = type_mask(3, true);
        assert_eq!(m, vec![false, false, true, true, true, true, true, true]);
        assert_eq!(m.iter().filter(|&&b| b).count(), 6);
        assert!(type_mask(3, false).iter().all(|&b| b));
    }
}
