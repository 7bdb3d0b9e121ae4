use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Which network summarizes a modality's evidence nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryVariant {
    /// Scaled gated graph network over a complete evidence graph.
    Gnn,
    /// GRU over the nodes in retrieval order; final state is the summary.
    GruSeq,
    /// LSTM over the nodes in retrieval order; final state is the summary.
    LstmSeq,
}

impl SummaryVariant {
    pub const ALL: [SummaryVariant; 3] = [SummaryVariant::Gnn, SummaryVariant::GruSeq, SummaryVariant::LstmSeq];

    pub fn as_str(self) -> &'static str {
        match self {
            SummaryVariant::Gnn => "gnn",
            SummaryVariant::GruSeq => "gru_seq",
            SummaryVariant::LstmSeq => "lstm_seq",
        }
    }
}

impl fmt::Display for SummaryVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SummaryVariant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown summary variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width of graph nodes and recurrent summaries.
    pub hidden: usize,
    /// Width of the matched evidence feature.
    pub node_dim: usize,
    pub conv_width: usize,
    /// Propagation steps of the graph summary.
    pub timesteps: usize,
    /// Added to the neighbour count in scaled aggregation.
    pub epsilon: f64,
    pub cross_modal: bool,
    pub variant: SummaryVariant,
    pub detector_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            node_dim: 64,
            conv_width: 3,
            timesteps: 1,
            epsilon: 1e-8,
            cross_modal: true,
            variant: SummaryVariant::Gnn,
            detector_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(&self, variant: SummaryVariant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.hidden == 0 || self.node_dim == 0 || self.detector_hidden == 0 {
            return bad("hidden, node_dim and detector_hidden must be positive");
        }
        if self.conv_width.is_multiple_of(2) {
            return bad("conv_width must be odd");
        }
        if self.timesteps == 0 {
            return bad("timesteps must be at least 1");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be a positive finite number");
        }
        if self.variant == SummaryVariant::Gnn && self.node_dim > self.hidden {
            return bad("node_dim cannot exceed hidden: node states are zero-padded to hidden");
        }
        Ok(())
    }
}
