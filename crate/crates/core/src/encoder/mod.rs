//! The gated two-layer caption encoder.
//!
//! The lower LSTM reads word embeddings. At every step a boundary gate,
//! computed from the lower hidden state and the image's visual feature,
//! scales the lower hidden state before it is fed to the upper LSTM. The
//! final upper hidden state is the caption representation.

pub mod gate;
pub mod lstm;

pub use gate::{gumbel_sigmoid, GateMode, GateNodes, GateNoise, GateParams, GumbelNoise, NoNoise};
pub use lstm::{lstm_cell_step, CandidateActivation, LstmNodes, LstmParams};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};

/// Graph handles of both LSTM layers and the gate.
#[derive(Clone, Copy, Debug)]
pub struct EncoderNodes {
    pub lower: LstmNodes,
    pub upper: LstmNodes,
    pub gate: GateNodes,
}

/// Per-timestep trace of one encoded caption.
#[derive(Clone, Debug)]
pub struct EncodedSequence {
    pub final_hidden: NodeId,
    pub gates: Vec<NodeId>,
    pub lower_hidden: Vec<NodeId>,
    pub upper_hidden: Vec<NodeId>,
}

impl EncodedSequence {
    pub fn gate_values(&self, graph: &Graph) -> Vec<f64> {
        self.gates.iter().map(|&z| graph.value(z).item()).collect()
    }
}

/// Runs both layers over `embedded` (one node per token) with zero initial
/// states, gating the lower→upper connection with visual feature `visual`.
pub fn encode_sequence(
    graph: &mut Graph,
    nodes: &EncoderNodes,
    embedded: &[NodeId],
    visual: NodeId,
    noise: &mut dyn GateNoise,
) -> Result<EncodedSequence> {
    if embedded.is_empty() {
        return Err(Error::invalid("cannot encode an empty sequence"));
    }
    let (mut h_lo, mut c_lo) = nodes.lower.initial_state(graph);
    let (mut h_up, mut c_up) = nodes.upper.initial_state(graph);
    let visual_input = nodes.gate.visual_input(graph, visual)?;

    let n = embedded.len();
    let mut trace = EncodedSequence {
        final_hidden: h_up,
        gates: Vec::with_capacity(n),
        lower_hidden: Vec::with_capacity(n),
        upper_hidden: Vec::with_capacity(n),
    };
    for &e in embedded {
        (h_lo, c_lo) = nodes.lower.step(graph, e, h_lo, c_lo)?;
        let z = nodes.gate.boundary_gate(graph, h_lo, visual_input, noise)?;
        let gated = graph.mul(h_lo, z)?;
        (h_up, c_up) = nodes.upper.step(graph, gated, h_up, c_up)?;
        trace.gates.push(z);
        trace.lower_hidden.push(h_lo);
        trace.upper_hidden.push(h_up);
    }
    trace.final_hidden = h_up;
    Ok(trace)
}
