//! Asynchronous message-passing encoder.
//!
//! Each layer is one sweep over the graph in topological order. A node's
//! update reads its own state from the previous layer and the current-layer
//! states of its predecessors, which the sweep has already produced.
//! Predecessors are always visited in key order, so the result does not
//! depend on how the graph happens to be stored.

use rand::Rng;
use serde::Serialize;

use crate::autodiff::nn::{GatedSum, GruCell, Linear};
use crate::autodiff::{ModelParams, NdArray, ParamId, Tape, Var};
use crate::error::Result;
use crate::logic::{AstGraph, Direction, NodeType};
use crate::model::config::{EncoderCell, EncoderConfig};

pub const GAT_SLOPE: f64 = 0.2;

#[derive(Clone, Debug)]
struct GatHead {
    w: ParamId,
    /// Attention vector stored as a `1 x out` row.
    a: ParamId,
}

#[derive(Clone, Debug)]
enum Layer {
    Gru { cell: GruCell, agg: GatedSum },
    Gcn { lin: Linear },
    Gat { heads: Vec<GatHead>, average: bool },
}

#[derive(Clone, Debug)]
struct Sweep {
    direction: Direction,
    input: Linear,
    layers: Vec<Layer>,
}

/// One state update observed during an instrumented sweep.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UpdateRecord {
    pub reverse: bool,
    pub layer: usize,
    pub node: usize,
    /// `(node, version)` pairs read; version 0 is the input map output and
    /// version `l + 1` the output of layer `l`.
    pub reads: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    sweeps: Vec<Sweep>,
}

/// Splits `total` into `parts` near-equal chunk sizes.
fn split_dims(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|k| total / parts + usize::from(k < total % parts)).collect()
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        config: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let hs = config.hidden_size;
        let vocab = NodeType::vocab_size(config.n);
        let mut directions = vec![Direction::Forward];
        if config.bidirectional {
            directions.push(Direction::Reverse);
        }
        let mut sweeps = Vec::new();
        for dir in directions {
            let tag = match dir {
                Direction::Forward => "fwd",
                Direction::Reverse => "rev",
            };
            let name = format!("{prefix}.{tag}");
            let input = Linear::new(params, &format!("{name}.input"), vocab, hs, rng)?;
            let mut layers = Vec::with_capacity(config.layers);
            for l in 0..config.layers {
                let lname = format!("{name}.layer{l}");
                let layer = match config.cell {
                    EncoderCell::Gru => Layer::Gru {
                        cell: GruCell::new(params, &format!("{lname}.gru"), hs, hs, rng)?,
                        agg: GatedSum::new(params, &format!("{lname}.agg"), hs, hs, rng)?,
                    },
                    EncoderCell::Gcn => Layer::Gcn { lin: Linear::new(params, &format!("{lname}.lin"), hs, hs, rng)? },
                    EncoderCell::Gat => {
                        let h = config.gat_heads[l];
                        let average = l + 1 == config.layers;
                        let dims = if average { vec![hs; h] } else { split_dims(hs, h) };
                        let bound = 1.0 / (hs as f64).sqrt();
                        let mut heads = Vec::with_capacity(h);
                        for (k, &d) in dims.iter().enumerate() {
                            let w = params.register_uniform(format!("{lname}.head{k}.w"), d, hs, bound, rng)?;
                            let a = params.register_uniform(
                                format!("{lname}.head{k}.a"),
                                1,
                                d,
                                1.0 / (d as f64).sqrt(),
                                rng,
                            )?;
                            heads.push(GatHead { w, a });
                        }
                        Layer::Gat { heads, average }
                    }
                };
                layers.push(layer);
            }
            sweeps.push(Sweep { direction: dir, input, layers });
        }
        Ok(Encoder { config: config.clone(), sweeps })
    }

    /// Encodes `graph` and returns `out_e`.
    pub fn encode(&self, tape: &mut Tape<'_>, graph: &AstGraph) -> Result<Var> {
        let states = self.sweep_all(tape, graph, None)?;
        self.read_out(tape, graph, &states)
    }

    /// Like [`Encoder::encode`], also recording which state versions every
    /// update read.
    pub fn encode_traced(&self, tape: &mut Tape<'_>, graph: &AstGraph) -> Result<(Var, Vec<UpdateRecord>)> {
        let mut trace = Vec::new();
        let states = self.sweep_all(tape, graph, Some(&mut trace))?;
        Ok((self.read_out(tape, graph, &states)?, trace))
    }

    /// Final-layer state of every node, one vector per sweep direction
    /// (forward first).
    pub fn node_states(&self, tape: &mut Tape<'_>, graph: &AstGraph) -> Result<Vec<Vec<Var>>> {
        self.sweep_all(tape, graph, None)
    }

    fn read_out(&self, tape: &mut Tape<'_>, graph: &AstGraph, states: &[Vec<Var>]) -> Result<Var> {
        let outputs: Vec<Var> = self.sweeps.iter().zip(states).map(|(s, st)| st[graph.sink(s.direction)]).collect();
        if outputs.len() == 1 {
            Ok(outputs[0])
        } else {
            tape.concat(&outputs)
        }
    }

    fn sweep_all(
        &self,
        tape: &mut Tape<'_>,
        graph: &AstGraph,
        mut trace: Option<&mut Vec<UpdateRecord>>,
    ) -> Result<Vec<Vec<Var>>> {
        if graph.n != self.config.n {
            return Err(crate::Error::Mismatch(format!(
                "graph built for n={} but the encoder expects n={}",
                graph.n, self.config.n
            )));
        }
        let mut outputs = Vec::with_capacity(self.sweeps.len());
        for sweep in &self.sweeps {
            let dir = sweep.direction;
            let order = graph.topological_order(dir);
            let mut prev: Vec<Var> = Vec::with_capacity(graph.len());
            for v in 0..graph.len() {
                let x = tape.vector(graph.feature(v, dir));
                prev.push(sweep.input.forward(tape, x)?);
            }
            for (l, layer) in sweep.layers.iter().enumerate() {
                let mut cur: Vec<Option<Var>> = vec![None; graph.len()];
                // cached W·h of current-layer states, per head
                let mut cache: Vec<Vec<Option<Var>>> = Vec::new();
                for &v in &order {
                    let preds = graph.predecessors(v, dir);
                    let pred_states: Vec<Var> =
                        preds.iter().map(|&w| cur[w].expect("predecessors precede in topological order")).collect();
                    if let Some(t) = trace.as_deref_mut() {
                        let mut reads = vec![(v, l)];
                        reads.extend(preds.iter().map(|&w| (w, l + 1)));
                        t.push(UpdateRecord { reverse: dir == Direction::Reverse, layer: l, node: v, reads });
                    }
                    let h = match layer {
                        Layer::Gru { cell, agg } => {
                            let m = agg.forward(tape, &pred_states)?;
                            cell.forward(tape, prev[v], m)?
                        }
                        Layer::Gcn { lin } => {
                            if cache.is_empty() {
                                cache.push(vec![None; graph.len()]);
                            }
                            let w = tape.param(lin.w);
                            let b = tape.param(lin.b);
                            let dv = (preds.len() + 1) as f64;
                            let mut terms = Vec::with_capacity(preds.len() + 1);
                            let self_msg = tape.matmul(w, prev[v])?;
                            terms.push(tape.scale(self_msg, 1.0 / dv)?);
                            for (&p, &hp) in preds.iter().zip(&pred_states) {
                                let wh = match cache[0][p] {
                                    Some(x) => x,
                                    None => {
                                        let x = tape.matmul(w, hp)?;
                                        cache[0][p] = Some(x);
                                        x
                                    }
                                };
                                let dw = (graph.predecessors(p, dir).len() + 1) as f64;
                                terms.push(tape.scale(wh, 1.0 / (dv * dw).sqrt())?);
                            }
                            let s = tape.add_n(&terms)?;
                            let s = tape.add(s, b)?;
                            tape.tanh(s)?
                        }
                        Layer::Gat { heads, average } => {
                            if cache.is_empty() {
                                cache = vec![vec![None; graph.len()]; heads.len()];
                            }
                            let mut outs = Vec::with_capacity(heads.len());
                            for (k, head) in heads.iter().enumerate() {
                                let w = tape.param(head.w);
                                let a = tape.param(head.a);
                                let mut items = Vec::with_capacity(preds.len() + 1);
                                items.push(tape.matmul(w, prev[v])?);
                                for (&p, &hp) in preds.iter().zip(&pred_states) {
                                    let wh = match cache[k][p] {
                                        Some(x) => x,
                                        None => {
                                            let x = tape.matmul(w, hp)?;
                                            cache[k][p] = Some(x);
                                            x
                                        }
                                    };
                                    items.push(wh);
                                }
                                outs.push(gat_attend(tape, a, &items)?);
                            }
                            let combined = if *average {
                                let s = if outs.len() == 1 { outs[0] } else { tape.add_n(&outs)? };
                                tape.scale(s, 1.0 / outs.len() as f64)?
                            } else {
                                tape.concat(&outs)?
                            };
                            tape.tanh(combined)?
                        }
                    };
                    cur[v] = Some(h);
                }
                prev = cur.into_iter().map(|h| h.expect("every node updated")).collect();
            }
            outputs.push(prev);
        }
        Ok(outputs)
    }
}

/// Softmax attention over `items`, where `items[0]` is the node's own
/// transformed state. Logits are `leaky_relu(a·(W h_v + W h_w))`.
fn gat_alpha(tape: &mut Tape<'_>, a: Var, items: &[Var]) -> Result<Var> {
    let own = items[0];
    let mut logits = Vec::with_capacity(items.len());
    for &it in items {
        let s = tape.add(own, it)?;
        let e = tape.matmul(a, s)?;
        logits.push(tape.leaky_relu(e, GAT_SLOPE)?);
    }
    let stacked = tape.concat(&logits)?;
    tape.softmax(stacked)
}

fn gat_attend(tape: &mut Tape<'_>, a: Var, items: &[Var]) -> Result<Var> {
    let alpha = gat_alpha(tape, a, items)?;
    let mut weighted = Vec::with_capacity(items.len());
    for (j, &it) in items.iter().enumerate() {
        let aj = tape.pick(alpha, j)?;
        weighted.push(tape.mul_scalar(it, aj)?);
    }
    if weighted.len() == 1 {
        Ok(weighted[0])
    } else {
        tape.add_n(&weighted)
    }
}

/// Attention weights one GAT head assigns to a node and its predecessors.
pub fn gat_weights(a: &NdArray, own: &NdArray, others: &[NdArray]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let a = tape.constant(a.clone());
    let mut items = vec![tape.constant(own.clone())];
    items.extend(others.iter().map(|o| tape.constant(o.clone())));
    let alpha = gat_alpha(&mut tape, a, &items)?;
    Ok(tape.value(alpha).data().to_vec())
}
