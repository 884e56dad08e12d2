//! Gated graph propagation over the co-occurrence adjacency, instantiated
//! twice: once over per-category feature vectors and once over classifier
//! weight vectors.
//!
//! Each synchronous round aggregates, for every node, the out-edge-weighted
//! and in-edge-weighted sums of the previous round's neighbor states, then
//! applies a bias-free GRU-style gated update. Gate parameters are shared
//! across nodes, which is what makes the networks permutation-equivariant
//! and lets a trained network run on a different category count.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::uniform_init;
use crate::diffcore::{Array, Element, Tape, ValueId};
use crate::error::Result;
use crate::vocab_graph::CooccurrenceGraph;

/// Per-node hidden states, one C×D row matrix.
pub type NodeStates<F> = Array<F>;

/// Bias-free gate parameters of one propagation network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams<F: Element> {
    pub w_z: Array<F>, // D×2D
    pub u_z: Array<F>, // D×D
    pub w_r: Array<F>, // D×2D
    pub u_r: Array<F>, // D×D
    pub w: Array<F>,   // D×2D
    pub u: Array<F>,   // D×D
}

impl<F: Element> GateParams<F> {
    pub fn init<R: Rng>(rng: &mut R, hidden: usize) -> Self {
        let two = 2 * hidden;
        GateParams {
            w_z: uniform_init(rng, vec![hidden, two], two),
            u_z: uniform_init(rng, vec![hidden, hidden], hidden),
            w_r: uniform_init(rng, vec![hidden, two], two),
            u_r: uniform_init(rng, vec![hidden, hidden], hidden),
            w: uniform_init(rng, vec![hidden, two], two),
            u: uniform_init(rng, vec![hidden, hidden], hidden),
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        let two = 2 * hidden;
        GateParams {
            w_z: Array::zeros(vec![hidden, two]),
            u_z: Array::zeros(vec![hidden, hidden]),
            w_r: Array::zeros(vec![hidden, two]),
            u_r: Array::zeros(vec![hidden, hidden]),
            w: Array::zeros(vec![hidden, two]),
            u: Array::zeros(vec![hidden, hidden]),
        }
    }

    pub fn to_f64(&self) -> GateParams<f64> {
        GateParams {
            w_z: self.w_z.to_f64(),
            u_z: self.u_z.to_f64(),
            w_r: self.w_r.to_f64(),
            u_r: self.u_r.to_f64(),
            w: self.w.to_f64(),
            u: self.u.to_f64(),
        }
    }
}

/// Affine 2D→D output head followed by tanh; one instance maps
/// `[h^T ; h^0]` to the contextualized feature, another to the refined
/// classifier weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputNetParams<F: Element> {
    pub weight: Array<F>, // D×2D
    pub bias: Array<F>,   // D
}

impl<F: Element> OutputNetParams<F> {
    pub fn init<R: Rng>(rng: &mut R, hidden: usize) -> Self {
        OutputNetParams {
            weight: uniform_init(rng, vec![hidden, 2 * hidden], 2 * hidden),
            bias: Array::zeros(vec![hidden]),
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        OutputNetParams {
            weight: Array::zeros(vec![hidden, 2 * hidden]),
            bias: Array::zeros(vec![hidden]),
        }
    }

    pub fn to_f64(&self) -> OutputNetParams<f64> {
        OutputNetParams {
            weight: self.weight.to_f64(),
            bias: self.bias.to_f64(),
        }
    }
}

/// Classifier weight rows, drawn before training and refined by the
/// semantic propagation network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWeights<F: Element> {
    pub init: Array<F>, // C×D
}

impl<F: Element> ClassifierWeights<F> {
    pub fn init<R: Rng>(rng: &mut R, categories: usize, hidden: usize) -> Self {
        ClassifierWeights {
            init: uniform_init(rng, vec![categories, hidden], hidden),
        }
    }

    pub fn to_f64(&self) -> ClassifierWeights<f64> {
        ClassifierWeights {
            init: self.init.to_f64(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GateIds {
    pub w_z: ValueId,
    pub u_z: ValueId,
    pub w_r: ValueId,
    pub u_r: ValueId,
    pub w: ValueId,
    pub u: ValueId,
}

pub fn bind_gates<F: Element>(tape: &mut Tape<F>, params: &GateParams<F>) -> GateIds {
    GateIds {
        w_z: tape.param(params.w_z.clone()),
        u_z: tape.param(params.u_z.clone()),
        w_r: tape.param(params.w_r.clone()),
        u_r: tape.param(params.u_r.clone()),
        w: tape.param(params.w.clone()),
        u: tape.param(params.u.clone()),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OutputNetIds {
    pub weight: ValueId,
    pub bias: ValueId,
}

pub fn bind_output_net<F: Element>(tape: &mut Tape<F>, params: &OutputNetParams<F>) -> OutputNetIds {
    OutputNetIds {
        weight: tape.param(params.weight.clone()),
        bias: tape.param(params.bias.clone()),
    }
}

/// Adjacency and its transpose as tape constants.
pub fn bind_adjacency<F: Element>(
    tape: &mut Tape<F>,
    graph: &CooccurrenceGraph,
) -> (ValueId, ValueId) {
    let c = graph.size();
    let data: Vec<F> = graph.data().iter().map(|&v| F::from_f64(v)).collect();
    let mut transposed = vec![F::zero(); c * c];
    for i in 0..c {
        for j in 0..c {
            transposed[j * c + i] = data[i * c + j];
        }
    }
    let adj = tape.constant(Array::from_vec(vec![c, c], data));
    let adj_t = tape.constant(Array::from_vec(vec![c, c], transposed));
    (adj, adj_t)
}

/// Message aggregation for every node at once:
/// row c of the result is `[Σ_c' a[c][c']·h_c' ; Σ_c' a[c'][c]·h_c']`.
pub fn aggregate_on_tape<F: Element>(
    tape: &mut Tape<F>,
    adj: ValueId,
    adj_t: ValueId,
    states: ValueId,
) -> Result<ValueId> {
    let outgoing = tape.matmul(adj, states)?;
    let incoming = tape.matmul(adj_t, states)?;
    tape.concat(&[outgoing, incoming], 1)
}

/// One gated update applied to all rows: `z = σ(a·W_zᵀ + h·U_zᵀ)`,
/// `r = σ(a·W_rᵀ + h·U_rᵀ)`, `h̃ = tanh(a·Wᵀ + (r⊙h)·Uᵀ)`,
/// `h' = (1−z)⊙h + z⊙h̃`. No bias terms.
pub fn gru_update_on_tape<F: Element>(
    tape: &mut Tape<F>,
    gates: &GateIds,
    aggregated: ValueId,
    h_prev: ValueId,
) -> Result<ValueId> {
    let w_z_t = tape.transpose(gates.w_z)?;
    let u_z_t = tape.transpose(gates.u_z)?;
    let w_r_t = tape.transpose(gates.w_r)?;
    let u_r_t = tape.transpose(gates.u_r)?;
    let w_t = tape.transpose(gates.w)?;
    let u_t = tape.transpose(gates.u)?;

    let za = tape.matmul(aggregated, w_z_t)?;
    let zh = tape.matmul(h_prev, u_z_t)?;
    let z_pre = tape.add(za, zh)?;
    let z = tape.sigmoid(z_pre);

    let ra = tape.matmul(aggregated, w_r_t)?;
    let rh = tape.matmul(h_prev, u_r_t)?;
    let r_pre = tape.add(ra, rh)?;
    let r = tape.sigmoid(r_pre);

    let gated = tape.mul(r, h_prev)?;
    let ca = tape.matmul(aggregated, w_t)?;
    let ch = tape.matmul(gated, u_t)?;
    let c_pre = tape.add(ca, ch)?;
    let candidate = tape.tanh(c_pre);

    // (1−z)⊙h + z⊙h̃ = h − z⊙h + z⊙h̃
    let zh_prev = tape.mul(z, h_prev)?;
    let kept = tape.sub(h_prev, zh_prev)?;
    let taken = tape.mul(z, candidate)?;
    tape.add(kept, taken)
}

/// T synchronous rounds; every node reads the (t−1)-states. T = 0 returns
/// the initial states untouched.
pub fn propagate_on_tape<F: Element>(
    tape: &mut Tape<F>,
    gates: &GateIds,
    adj: ValueId,
    adj_t: ValueId,
    init: ValueId,
    steps: usize,
) -> Result<ValueId> {
    let mut h = init;
    for _ in 0..steps {
        let agg = aggregate_on_tape(tape, adj, adj_t, h)?;
        h = gru_update_on_tape(tape, gates, agg, h)?;
    }
    Ok(h)
}

/// `tanh(affine([h^T ; h^0]))` for every row.
pub fn output_net_on_tape<F: Element>(
    tape: &mut Tape<F>,
    out: &OutputNetIds,
    h_final: ValueId,
    h_init: ValueId,
) -> Result<ValueId> {
    let cat = tape.concat(&[h_final, h_init], 1)?;
    let w_t = tape.transpose(out.weight)?;
    let lin = tape.matmul(cat, w_t)?;
    let rows = tape.value(lin).shape()[0];
    let hidden = tape.value(out.bias).len();
    let ones = tape.constant(Array::from_vec(vec![rows, 1], vec![F::one(); rows]));
    let bias_row = tape.reshape(out.bias, vec![1, hidden])?;
    let bias_rep = tape.matmul(ones, bias_row)?;
    let pre = tape.add(lin, bias_rep)?;
    Ok(tape.tanh(pre))
}

/// Full pass of one propagation network: initialize, run T rounds, map
/// `[h^T ; h^0]` through the output head.
pub fn graph_forward_on_tape<F: Element>(
    tape: &mut Tape<F>,
    gates: &GateIds,
    out: &OutputNetIds,
    adj: ValueId,
    adj_t: ValueId,
    init: ValueId,
    steps: usize,
) -> Result<ValueId> {
    let h_final = propagate_on_tape(tape, gates, adj, adj_t, init, steps)?;
    output_net_on_tape(tape, out, h_final, init)
}

// ── Standalone (eager) forms ─────────────────────────────────────────────

/// Out-edge and in-edge weighted neighbor sums for one node, concatenated.
pub fn aggregate<F: Element>(
    states: &NodeStates<F>,
    graph: &CooccurrenceGraph,
    node: usize,
) -> Result<Array<F>> {
    let mut tape = Tape::new();
    let (adj, adj_t) = bind_adjacency(&mut tape, graph);
    let h = tape.constant(states.clone());
    let agg = aggregate_on_tape(&mut tape, adj, adj_t, h)?;
    Ok(Array::vector(tape.value(agg).row(node).to_vec()))
}

/// Single-node gated update from an aggregated 2D-vector.
pub fn gru_update<F: Element>(
    aggregated: &Array<F>,
    h_prev: &Array<F>,
    params: &GateParams<F>,
) -> Result<Array<F>> {
    let mut tape = Tape::new();
    let gates = bind_gates(&mut tape, params);
    let a = tape.constant(Array::from_vec(
        vec![1, aggregated.len()],
        aggregated.data().to_vec(),
    ));
    let h = tape.constant(Array::from_vec(
        vec![1, h_prev.len()],
        h_prev.data().to_vec(),
    ));
    let next = gru_update_on_tape(&mut tape, &gates, a, h)?;
    Ok(Array::vector(tape.value(next).row(0).to_vec()))
}

/// T synchronous propagation rounds over the whole graph.
pub fn propagate<F: Element>(
    init: &NodeStates<F>,
    graph: &CooccurrenceGraph,
    steps: usize,
    params: &GateParams<F>,
) -> Result<NodeStates<F>> {
    if steps == 0 {
        return Ok(init.clone()); // bit-exact identity
    }
    let mut tape = Tape::new();
    let gates = bind_gates(&mut tape, params);
    let (adj, adj_t) = bind_adjacency(&mut tape, graph);
    let h0 = tape.constant(init.clone());
    let h = propagate_on_tape(&mut tape, &gates, adj, adj_t, h0, steps)?;
    Ok(tape.value(h).clone())
}

/// Contextualized per-category features from attention-pooled inputs.
pub fn feature_forward<F: Element>(
    features: &NodeStates<F>,
    graph: &CooccurrenceGraph,
    gates: &GateParams<F>,
    out: &OutputNetParams<F>,
    steps: usize,
) -> Result<NodeStates<F>> {
    let mut tape = Tape::new();
    let gate_ids = bind_gates(&mut tape, gates);
    let out_ids = bind_output_net(&mut tape, out);
    let (adj, adj_t) = bind_adjacency(&mut tape, graph);
    let h0 = tape.constant(features.clone());
    let o = graph_forward_on_tape(&mut tape, &gate_ids, &out_ids, adj, adj_t, h0, steps)?;
    Ok(tape.value(o).clone())
}

/// Refined classifier weights from the randomly drawn initial rows.
pub fn semantic_forward<F: Element>(
    weights: &ClassifierWeights<F>,
    graph: &CooccurrenceGraph,
    gates: &GateParams<F>,
    out: &OutputNetParams<F>,
    steps: usize,
) -> Result<NodeStates<F>> {
    feature_forward(&weights.init, graph, gates, out, steps)
}
