//! Gated graph summary over the complete evidence graph.
//!
//! Every node is adjacent to every other node of its own modality and, with
//! cross-modal edges enabled, to every node of the other modalities. The
//! neighbour sum plus the branch bias is divided by `neighbours + ε` before
//! the GRU update, so aggregate magnitudes do not grow with the number of
//! evidences.

use rand::Rng;

use crate::numeric::{add_assign, Activation, Dense, DenseCache, GruCache, GruCell, ParamId, ParamRegistry, Tensor};

use super::ModelError;

/// A node is one (modality branch, retrieved evidence) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub modality: usize,
    pub evidence: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphState {
    pub nodes: Vec<NodeRef>,
    pub hidden: Vec<Vec<f64>>,
    pub timestep: usize,
}

impl GraphState {
    /// Initial states: node features zero-padded to `width`.
    pub fn initial(nodes: Vec<NodeRef>, features: Vec<Vec<f64>>, width: usize) -> Self {
        assert_eq!(nodes.len(), features.len());
        let hidden = features
            .into_iter()
            .map(|mut x| {
                assert!(x.len() <= width, "node feature wider than hidden state");
                x.resize(width, 0.0);
                x
            })
            .collect();
        Self {
            nodes,
            hidden,
            timestep: 1,
        }
    }

    pub fn modality_nodes(&self, modality: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.modality == modality)
            .map(|(i, _)| i)
    }
}

fn adjacent(nodes: &[NodeRef], v: usize, cross_modal: bool) -> impl Iterator<Item = usize> + '_ {
    let m = nodes[v].modality;
    (0..nodes.len()).filter(move |&u| u != v && (cross_modal || nodes[u].modality == m))
}

fn neighbour_count(nodes: &[NodeRef], v: usize, cross_modal: bool) -> usize {
    adjacent(nodes, v, cross_modal).count()
}

/// Scaled aggregate for every node:
/// `a_v = (Σ_{u adjacent v} h_u + b_{m(v)}) / (|adjacent(v)| + ε)`.
pub fn aggregate(
    nodes: &[NodeRef],
    hidden: &[Vec<f64>],
    biases: &[&[f64]],
    cross_modal: bool,
    epsilon: f64,
) -> Vec<Vec<f64>> {
    (0..nodes.len())
        .map(|v| {
            let mut acc = vec![0.0; hidden[v].len()];
            for u in adjacent(nodes, v, cross_modal) {
                add_assign(&mut acc, &hidden[u]);
            }
            add_assign(&mut acc, biases[nodes[v].modality]);
            let denom = neighbour_count(nodes, v, cross_modal) as f64 + epsilon;
            acc.iter_mut().for_each(|x| *x /= denom);
            acc
        })
        .collect()
}

/// Adjoint of [`aggregate`]: adds into hidden-state and bias gradients.
pub fn aggregate_backward(
    nodes: &[NodeRef],
    d_aggregate: &[Vec<f64>],
    cross_modal: bool,
    epsilon: f64,
    d_hidden: &mut [Vec<f64>],
    d_bias: &mut [Vec<f64>],
) {
    for (v, da) in d_aggregate.iter().enumerate() {
        let denom = neighbour_count(nodes, v, cross_modal) as f64 + epsilon;
        let scaled: Vec<f64> = da.iter().map(|x| x / denom).collect();
        for u in adjacent(nodes, v, cross_modal) {
            add_assign(&mut d_hidden[u], &scaled);
        }
        add_assign(&mut d_bias[nodes[v].modality], &scaled);
    }
}

/// Per-modality graph parameters.
#[derive(Clone, Copy, Debug)]
pub struct GraphBranch {
    pub gru: GruCell,
    pub aggregate_bias: ParamId,
    /// `H → H` sigmoid gate used by the readout.
    pub attention: Dense,
}

impl GraphBranch {
    pub fn register<R: Rng>(registry: &mut ParamRegistry, prefix: &str, hidden: usize, rng: &mut R) -> Result<Self, ModelError> {
        Ok(Self {
            gru: GruCell::register(registry, &format!("{prefix}.gru"), hidden, hidden, rng)?,
            aggregate_bias: registry.register_zeros(&format!("{prefix}.aggregate_bias"), &[hidden])?,
            attention: Dense::register(registry, &format!("{prefix}.readout"), hidden, hidden, Activation::Sigmoid, rng)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct PropagationTape {
    steps: Vec<Vec<GruCache>>,
}

/// Runs `timesteps` simultaneous GRU updates; every node reads the previous
/// step's states.
pub fn propagate(
    values: &[Tensor],
    branches: &[GraphBranch],
    mut state: GraphState,
    timesteps: usize,
    cross_modal: bool,
    epsilon: f64,
) -> (GraphState, PropagationTape) {
    let biases: Vec<&[f64]> = branches.iter().map(|b| values[b.aggregate_bias.index()].data()).collect();
    let mut steps = Vec::with_capacity(timesteps);
    for _ in 0..timesteps {
        let agg = aggregate(&state.nodes, &state.hidden, &biases, cross_modal, epsilon);
        let mut caches = Vec::with_capacity(state.nodes.len());
        let mut next = Vec::with_capacity(state.nodes.len());
        for (v, node) in state.nodes.iter().enumerate() {
            let (h, cache) = branches[node.modality].gru.forward(values, &state.hidden[v], &agg[v]);
            next.push(h);
            caches.push(cache);
        }
        state.hidden = next;
        state.timestep += 1;
        steps.push(caches);
    }
    (state, PropagationTape { steps })
}

/// Backpropagates through [`propagate`]; returns gradients of the initial states.
#[allow(clippy::too_many_arguments)]
pub fn propagate_backward(
    values: &[Tensor],
    grads: &mut [Tensor],
    branches: &[GraphBranch],
    nodes: &[NodeRef],
    tape: &PropagationTape,
    d_final: Vec<Vec<f64>>,
    cross_modal: bool,
    epsilon: f64,
) -> Vec<Vec<f64>> {
    let mut d_hidden = d_final;
    for caches in tape.steps.iter().rev() {
        let mut d_prev = Vec::with_capacity(nodes.len());
        let mut d_agg = Vec::with_capacity(nodes.len());
        for (v, node) in nodes.iter().enumerate() {
            let (dh, da) = branches[node.modality].gru.backward(values, grads, &caches[v], &d_hidden[v]);
            d_prev.push(dh);
            d_agg.push(da);
        }
        let mut d_bias: Vec<Vec<f64>> = branches.iter().map(|b| vec![0.0; b.gru.hidden]).collect();
        aggregate_backward(nodes, &d_agg, cross_modal, epsilon, &mut d_prev, &mut d_bias);
        for (branch, db) in branches.iter().zip(&d_bias) {
            add_assign(grads[branch.aggregate_bias.index()].data_mut(), db);
        }
        d_hidden = d_prev;
    }
    d_hidden
}

#[derive(Clone, Debug)]
pub struct ReadoutCache {
    hidden: Vec<Vec<f64>>,
    gates: Vec<DenseCache>,
}

/// `G = Σ_v h_v ⊙ σ(Att(h_v))`, summed in the given node order. Zero vector
/// when there are no nodes.
pub fn readout(
    values: &[Tensor],
    attention: &Dense,
    hidden: &[&[f64]],
    width: usize,
) -> Result<(Vec<f64>, ReadoutCache), ModelError> {
    let mut summary = vec![0.0; width];
    let mut gates = Vec::with_capacity(hidden.len());
    for h in hidden {
        let (gate, cache) = attention.forward(values, h)?;
        for ((s, hv), g) in summary.iter_mut().zip(h.iter()).zip(&gate) {
            *s += hv * g;
        }
        gates.push(cache);
    }
    Ok((
        summary,
        ReadoutCache {
            hidden: hidden.iter().map(|h| h.to_vec()).collect(),
            gates,
        },
    ))
}

/// Returns `∂L/∂h_v` for each node passed to [`readout`].
pub fn readout_backward(
    values: &[Tensor],
    grads: &mut [Tensor],
    attention: &Dense,
    cache: &ReadoutCache,
    d_summary: &[f64],
) -> Vec<Vec<f64>> {
    cache
        .hidden
        .iter()
        .zip(&cache.gates)
        .map(|(h, gate_cache)| {
            let gate = gate_cache.output();
            let d_gate: Vec<f64> = d_summary.iter().zip(h).map(|(d, hv)| d * hv).collect();
            let mut dh = attention.backward(values, grads, gate_cache, &d_gate);
            for ((x, d), g) in dh.iter_mut().zip(d_summary).zip(gate) {
                *x += d * g;
            }
            dh
        })
        .collect()
}
