//! The multi-evidence detector.
//!
//! Per modality branch: evidence matching of the query against each retrieved
//! package, then a summary of the resulting nodes (graph, GRU or LSTM). The
//! per-modality summaries are concatenated in schema order and scored by a
//! two-layer detector with a sigmoid output.

mod config;
pub mod graph;
mod matching;
mod sequence;

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numeric::checkpoint::{read_checkpoint, write_checkpoint};
use crate::numeric::{Activation, Dense, DenseCache, GruCell, LstmCell, NumericError, ParamRegistry, Tensor};
use crate::store::{Package, Schema};

pub use config::{ModelConfig, SummaryVariant};
pub use graph::{GraphBranch, GraphState, NodeRef};
pub use matching::{EvidenceMatcher, MatchCache};
pub use sequence::{SequenceSummary, SequenceTape};

use graph::{propagate, propagate_backward, readout, readout_backward, PropagationTape, ReadoutCache};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error("invalid evidence: {0}")]
    Evidence(String),
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A query package with its retrieved evidence, in retrieval order.
#[derive(Clone, Debug, PartialEq)]
pub struct EvidenceSet {
    pub query: Package,
    pub retrieved: Vec<Package>,
}

impl EvidenceSet {
    pub fn new(query: Package, retrieved: Vec<Package>) -> Result<Self, ModelError> {
        if retrieved.is_empty() {
            return Err(ModelError::Evidence("at least one retrieved package is required".into()));
        }
        for r in &retrieved {
            if !r.modalities.keys().any(|m| query.modalities.contains_key(m)) {
                return Err(ModelError::Evidence(format!(
                    "retrieved {} shares no modality with query {}",
                    r.id, query.id
                )));
            }
        }
        Ok(Self { query, retrieved })
    }

    pub fn k(&self) -> usize {
        self.retrieved.len()
    }

    pub fn reversed(&self) -> Self {
        let mut retrieved = self.retrieved.clone();
        retrieved.reverse();
        Self {
            query: self.query.clone(),
            retrieved,
        }
    }

    /// Reorders the evidence so that position `i` holds `retrieved[order[i]]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.retrieved.len());
        Self {
            query: self.query.clone(),
            retrieved: order.iter().map(|&i| self.retrieved[i].clone()).collect(),
        }
    }
}

#[derive(Clone, Debug)]
enum Summaries {
    Graph(Vec<GraphBranch>),
    Sequence(Vec<SequenceSummary>),
}

#[derive(Clone, Copy, Debug)]
struct Detector {
    hidden: Dense,
    output: Dense,
}

#[derive(Clone, Debug)]
enum SummaryTape {
    Graph {
        propagation: PropagationTape,
        readouts: Vec<(Vec<usize>, ReadoutCache)>,
    },
    Sequence(Vec<(Vec<usize>, SequenceTape)>),
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    nodes: Vec<NodeRef>,
    matches: Vec<MatchCache>,
    summary: SummaryTape,
    detector_hidden: DenseCache,
    detector_output: DenseCache,
    summaries: Vec<Vec<f64>>,
    probability: f64,
}

impl ForwardTape {
    pub fn probability(&self) -> f64 {
        self.probability
    }

    /// Per-modality summaries, in schema order.
    pub fn summaries(&self) -> &[Vec<f64>] {
        &self.summaries
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }
}

#[derive(Clone, Debug)]
pub struct MegModel {
    config: ModelConfig,
    modalities: Vec<(String, usize)>,
    params: ParamRegistry,
    matchers: Vec<EvidenceMatcher>,
    summaries: Summaries,
    detector: Detector,
    tape: Option<ForwardTape>,
}

impl MegModel {
    /// Builds a model for every modality in `schema` with seeded fan-in
    /// uniform weights and zero biases.
    pub fn new(config: ModelConfig, schema: &Schema, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if schema.is_empty() {
            return Err(ModelError::Config("schema declares no modalities".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamRegistry::new();
        let modalities: Vec<(String, usize)> = schema.modalities().map(|(n, d)| (n.to_string(), d)).collect();
        let h = config.hidden;

        let mut matchers = Vec::new();
        for (name, dim) in &modalities {
            matchers.push(EvidenceMatcher::register(
                &mut params,
                &format!("{name}.match"),
                *dim,
                config.node_dim,
                config.conv_width,
                &mut rng,
            )?);
        }
        let summaries = match config.variant {
            SummaryVariant::Gnn => Summaries::Graph(
                modalities
                    .iter()
                    .map(|(name, _)| GraphBranch::register(&mut params, &format!("{name}.gnn"), h, &mut rng))
                    .collect::<Result<_, _>>()?,
            ),
            SummaryVariant::GruSeq => Summaries::Sequence(
                modalities
                    .iter()
                    .map(|(name, _)| {
                        GruCell::register(&mut params, &format!("{name}.seq_gru"), config.node_dim, h, &mut rng)
                            .map(SequenceSummary::Gru)
                    })
                    .collect::<Result<_, _>>()?,
            ),
            SummaryVariant::LstmSeq => Summaries::Sequence(
                modalities
                    .iter()
                    .map(|(name, _)| {
                        LstmCell::register(&mut params, &format!("{name}.seq_lstm"), config.node_dim, h, &mut rng)
                            .map(SequenceSummary::Lstm)
                    })
                    .collect::<Result<_, _>>()?,
            ),
        };
        let detector = Detector {
            hidden: Dense::register(
                &mut params,
                "detector.hidden",
                modalities.len() * h,
                config.detector_hidden,
                Activation::Relu,
                &mut rng,
            )?,
            output: Dense::register(&mut params, "detector.output", config.detector_hidden, 1, Activation::Sigmoid, &mut rng)?,
        };
        Ok(Self {
            config,
            modalities,
            params,
            matchers,
            summaries,
            detector,
            tape: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn modalities(&self) -> &[(String, usize)] {
        &self.modalities
    }

    pub fn params(&self) -> &ParamRegistry {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamRegistry {
        &mut self.params
    }

    /// Tampering probability; pure in the parameters and the evidence set.
    pub fn predict(&self, evidence: &EvidenceSet) -> Result<f64, ModelError> {
        Ok(self.run(evidence)?.probability)
    }

    /// Forward pass that keeps its tape for a later [`MegModel::backward`].
    pub fn forward(&mut self, evidence: &EvidenceSet) -> Result<f64, ModelError> {
        let tape = self.run(evidence)?;
        let p = tape.probability;
        self.tape = Some(tape);
        Ok(p)
    }

    /// Accumulates `upstream · ∂p/∂θ` into the registry gradients for the
    /// most recent [`MegModel::forward`]. May be called repeatedly; gradients add up.
    pub fn backward(&mut self, upstream: f64) -> Result<(), ModelError> {
        let tape = self.tape.take().ok_or(ModelError::BackwardBeforeForward)?;
        self.backward_tape(&tape, upstream);
        self.tape = Some(tape);
        Ok(())
    }

    pub fn clear_tape(&mut self) {
        self.tape = None;
    }

    /// Full forward pass returning the tape instead of storing it.
    pub fn run(&self, evidence: &EvidenceSet) -> Result<ForwardTape, ModelError> {
        self.run_with(self.params.values(), evidence)
    }

    /// Forward pass with parameter values taken from `values` (same layout as
    /// this model's registry) instead of the model's own.
    pub fn run_with(&self, values: &[Tensor], evidence: &EvidenceSet) -> Result<ForwardTape, ModelError> {
        assert_eq!(values.len(), self.params.len(), "parameter layout mismatch");
        let h = self.config.hidden;

        let mut nodes = Vec::new();
        let mut features = Vec::new();
        let mut matches = Vec::new();
        for (m, (name, _)) in self.modalities.iter().enumerate() {
            let Some(q) = evidence.query.modality(name) else {
                continue;
            };
            for (i, r) in evidence.retrieved.iter().enumerate() {
                let Some(rv) = r.modality(name) else {
                    continue;
                };
                let (x, cache) = self.matchers[m].forward(values, q, rv)?;
                nodes.push(NodeRef { modality: m, evidence: i });
                features.push(x);
                matches.push(cache);
            }
        }
        let members: Vec<Vec<usize>> = (0..self.modalities.len())
            .map(|m| (0..nodes.len()).filter(|&v| nodes[v].modality == m).collect())
            .collect();

        let (summaries, summary_tape) = match &self.summaries {
            Summaries::Graph(branches) => {
                let state = GraphState::initial(nodes.clone(), features, h);
                let (state, propagation) = propagate(
                    values,
                    branches,
                    state,
                    self.config.timesteps,
                    self.config.cross_modal,
                    self.config.epsilon,
                );
                let mut summaries = Vec::with_capacity(branches.len());
                let mut readouts = Vec::with_capacity(branches.len());
                for (branch, idx) in branches.iter().zip(&members) {
                    let hs: Vec<&[f64]> = idx.iter().map(|&v| state.hidden[v].as_slice()).collect();
                    let (g, cache) = readout(values, &branch.attention, &hs, h)?;
                    summaries.push(g);
                    readouts.push((idx.clone(), cache));
                }
                (summaries, SummaryTape::Graph { propagation, readouts })
            }
            Summaries::Sequence(cells) => {
                let mut summaries = Vec::with_capacity(cells.len());
                let mut tapes = Vec::with_capacity(cells.len());
                for (cell, idx) in cells.iter().zip(&members) {
                    let inputs: Vec<&[f64]> = idx.iter().map(|&v| features[v].as_slice()).collect();
                    let (g, tape) = cell.forward(values, &inputs);
                    summaries.push(g);
                    tapes.push((idx.clone(), tape));
                }
                (summaries, SummaryTape::Sequence(tapes))
            }
        };

        let concat: Vec<f64> = summaries.iter().flatten().copied().collect();
        let (hidden, detector_hidden) = self.detector.hidden.forward(values, &concat)?;
        let (out, detector_output) = self.detector.output.forward(values, &hidden)?;
        Ok(ForwardTape {
            nodes,
            matches,
            summary: summary_tape,
            detector_hidden,
            detector_output,
            summaries,
            probability: out[0],
        })
    }

    /// Accumulates `upstream · ∂p/∂θ` for an explicit tape.
    pub fn backward_tape(&mut self, tape: &ForwardTape, upstream: f64) {
        let h = self.config.hidden;
        let node_dim = self.config.node_dim;
        let (values, grads) = self.params.split_mut();

        let d_hidden = self.detector.output.backward(values, grads, &tape.detector_output, &[upstream]);
        let d_concat = self.detector.hidden.backward(values, grads, &tape.detector_hidden, &d_hidden);
        let d_summaries: Vec<&[f64]> = d_concat.chunks_exact(h).collect();

        let mut d_features: Vec<Vec<f64>> = vec![Vec::new(); tape.nodes.len()];
        match (&self.summaries, &tape.summary) {
            (Summaries::Graph(branches), SummaryTape::Graph { propagation, readouts }) => {
                let mut d_final = vec![vec![0.0; h]; tape.nodes.len()];
                for ((branch, (idx, cache)), dg) in branches.iter().zip(readouts).zip(&d_summaries) {
                    let dh = readout_backward(values, grads, &branch.attention, cache, dg);
                    for (&v, d) in idx.iter().zip(dh) {
                        d_final[v] = d;
                    }
                }
                let d_init = propagate_backward(
                    values,
                    grads,
                    branches,
                    &tape.nodes,
                    propagation,
                    d_final,
                    self.config.cross_modal,
                    self.config.epsilon,
                );
                for (df, mut d) in d_features.iter_mut().zip(d_init) {
                    d.truncate(node_dim);
                    *df = d;
                }
            }
            (Summaries::Sequence(cells), SummaryTape::Sequence(tapes)) => {
                for ((cell, (idx, seq_tape)), dg) in cells.iter().zip(tapes).zip(&d_summaries) {
                    let dx = cell.backward(values, grads, seq_tape, dg);
                    for (&v, d) in idx.iter().zip(dx) {
                        d_features[v] = d;
                    }
                }
            }
            _ => unreachable!("tape produced by a different summary variant"),
        }

        for ((node, cache), dx) in tape.nodes.iter().zip(&tape.matches).zip(&d_features) {
            self.matchers[node.modality].backward(values, grads, cache, dx);
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        write_checkpoint(&mut out, &self.params.snapshot())?;
        Ok(())
    }

    /// Rebuilds a model of the given shape and loads parameter values.
    pub fn load_checkpoint(config: ModelConfig, schema: &Schema, path: &Path) -> Result<Self, ModelError> {
        let mut model = Self::new(config, schema, 0)?;
        let entries = read_checkpoint(&mut BufReader::new(fs::File::open(path)?))?;
        model.params.load(&entries)?;
        Ok(model)
    }
}
