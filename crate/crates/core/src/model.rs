//! The complete re-identification model: caption branch, fusion and classifier.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::encoder::{
    encode_sequence, CandidateActivation, EncoderNodes, GateMode, GateNodes, GateNoise, GateParams,
    LstmNodes, LstmParams, NoNoise,
};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionParams};
use crate::text::{embed, tokenize, TokenSequence, Vocabulary, UNK};

/// Which branches feed the embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Gated caption encoder fused with the visual feature.
    #[default]
    Fused,
    /// No caption branch: the reduced half of the embedding is a learned
    /// projection of the visual feature itself, so the embedding has the
    /// same width as the fused one.
    VisualOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub reduced: usize,
    pub visual_dim: usize,
    pub tau: f64,
    pub gate_mode: GateMode,
    /// Reduce `F` to this many dimensions before it enters the gate.
    pub gate_visual_projection: Option<usize>,
    /// Sigmoid instead of tanh on the cell candidate.
    pub sigmoid_candidate: bool,
    pub branch: Branch,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 32,
            hidden: 32,
            reduced: 32,
            visual_dim: 64,
            tau: crate::encoder::gate::DEFAULT_TAU,
            gate_mode: GateMode::Hard,
            gate_visual_projection: None,
            sigmoid_candidate: false,
            branch: Branch::Fused,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("reduced", self.reduced),
            ("visual_dim", self.visual_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("model.{name} must be positive")));
            }
        }
        if self.gate_visual_projection == Some(0) {
            return Err(Error::invalid(
                "model.gate_visual_projection must be positive",
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!(
                "model.tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    pub fn candidate(&self) -> CandidateActivation {
        if self.sigmoid_candidate {
            CandidateActivation::Sigmoid
        } else {
            CandidateActivation::Tanh
        }
    }

    pub fn fused_dim(&self) -> usize {
        self.reduced + self.visual_dim
    }
}

/// Word embedding, both LSTM layers and the boundary gate.
#[derive(Clone, Debug, PartialEq)]
pub struct TextBranch {
    /// `[V, d]`
    pub embedding: Tensor,
    pub lower: LstmParams,
    pub upper: LstmParams,
    pub gate: GateParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub text: Option<TextBranch>,
    /// For [`Branch::VisualOnly`], `w_fc` is `[r, dim F]`.
    pub fusion: FusionParams,
}

/// A model registered on a graph.
#[derive(Clone, Debug)]
pub struct BoundModel {
    /// Parameter nodes, in [`Model::named_tensors`] order.
    pub params: Vec<NodeId>,
    text: Option<(NodeId, EncoderNodes)>,
    w_fc: NodeId,
    b_fc: NodeId,
    pub theta: NodeId,
}

/// Graph output for one observation.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub embedding: NodeId,
    pub gates: Vec<NodeId>,
}

/// Deterministic embedding of one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub embedding: Vec<f64>,
    /// One gate value per caption token (empty for the visual-only branch).
    pub gates: Vec<f64>,
    /// The caption tokens the gates refer to.
    pub tokens: Vec<String>,
}

/// Caption tokens and their ids; an empty caption becomes a single `<unk>`.
pub fn caption_tokens(vocab: &Vocabulary, caption: &str) -> Result<(Vec<String>, TokenSequence)> {
    let mut tokens = tokenize(caption);
    if tokens.is_empty() {
        tokens.push("<unk>".to_string());
    }
    let ids = tokens.iter().map(|t| vocab.id(t).unwrap_or(UNK)).collect();
    Ok((tokens, TokenSequence::new(ids, vocab)?))
}

impl Model {
    pub fn init<R: Rng + ?Sized>(
        config: ModelConfig,
        vocab: Vocabulary,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if classes == 0 {
            return Err(Error::invalid("the classifier needs at least one class"));
        }
        let c = &config;
        let (text, fc_input) = match c.branch {
            Branch::Fused => {
                let embedding =
                    Tensor::from_fn(&[vocab.len(), c.embed_dim], || rng.sample(StandardNormal));
                let lower = LstmParams::init(c.embed_dim, c.hidden, rng);
                let upper = LstmParams::init(c.hidden, c.hidden, rng);
                let gate = GateParams::init(
                    c.hidden,
                    c.visual_dim,
                    c.gate_visual_projection,
                    c.tau,
                    c.gate_mode,
                    rng,
                )?;
                let text = TextBranch {
                    embedding,
                    lower,
                    upper,
                    gate,
                };
                (Some(text), c.hidden)
            }
            Branch::VisualOnly => (None, c.visual_dim),
        };
        let fusion = FusionParams::init(fc_input, c.reduced, c.visual_dim, classes, rng);
        Ok(Model {
            config,
            vocab,
            text,
            fusion,
        })
    }

    pub fn classes(&self) -> usize {
        self.fusion.classes()
    }

    /// Every learnable tensor with a stable name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(t) = &self.text {
            out.push(("embedding".to_string(), &t.embedding));
            for (layer, p) in [("lower", &t.lower), ("upper", &t.upper)] {
                for (n, x) in LstmParams::NAMES.iter().zip(p.tensors()) {
                    out.push((format!("{layer}.{n}"), x));
                }
            }
            let gate_names = ["gate.w_z", "gate.b_z", "gate.visual_projection"];
            for (n, x) in gate_names.iter().zip(t.gate.tensors()) {
                out.push((n.to_string(), x));
            }
        }
        out.push(("fusion.w_fc".to_string(), &self.fusion.w_fc));
        out.push(("fusion.b_fc".to_string(), &self.fusion.b_fc));
        out.push(("fusion.theta".to_string(), &self.fusion.theta));
        out
    }

    /// Mutable view in [`Model::named_tensors`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(t) = &mut self.text {
            out.push(&mut t.embedding);
            out.extend(t.lower.tensors_mut());
            out.extend(t.upper.tensors_mut());
            out.extend(t.gate.tensors_mut());
        }
        out.push(&mut self.fusion.w_fc);
        out.push(&mut self.fusion.b_fc);
        out.push(&mut self.fusion.theta);
        out
    }

    /// Registers the parameters on `graph`. `gate_mode` overrides the
    /// configured gate mode.
    pub fn bind_with(&self, graph: &mut Graph, trainable: bool, gate_mode: GateMode) -> BoundModel {
        let params: Vec<NodeId> = self
            .named_tensors()
            .into_iter()
            .map(|(_, t)| graph.leaf(t.clone(), trainable))
            .collect();
        self.bind_nodes(params, gate_mode)
    }

    /// Wraps nodes already holding this model's tensors, in
    /// [`Model::named_tensors`] order.
    pub fn bind_nodes(&self, params: Vec<NodeId>, gate_mode: GateMode) -> BoundModel {
        assert_eq!(
            params.len(),
            self.named_tensors().len(),
            "one node per parameter tensor"
        );
        let n = params.len();
        let text = self.text.as_ref().map(|t| {
            let cand = self.config.candidate();
            let lower = LstmNodes::from_ids(&params[1..13], t.lower.hidden(), cand);
            let upper = LstmNodes::from_ids(&params[13..25], t.upper.hidden(), cand);
            let gate = GateNodes::from_ids(&params[25..n - 3], t.gate.tau, gate_mode);
            (params[0], EncoderNodes { lower, upper, gate })
        });
        BoundModel {
            text,
            w_fc: params[n - 3],
            b_fc: params[n - 2],
            theta: params[n - 1],
            params,
        }
    }

    /// Trainable binding with the configured gate mode.
    pub fn bind(&self, graph: &mut Graph) -> BoundModel {
        self.bind_with(graph, true, self.config.gate_mode)
    }

    /// Gate mode used at inference: noise-free hard threshold, unless the
    /// gates are forced.
    pub fn inference_gate_mode(&self) -> GateMode {
        match self.config.gate_mode {
            GateMode::Soft | GateMode::Hard => GateMode::Hard,
            forced => forced,
        }
    }

    /// Deterministic embedding and gate trace of one observation.
    pub fn infer(&self, features: &[f64], caption: &str) -> Result<Inference> {
        let mut graph = Graph::new();
        let bound = self.bind_with(&mut graph, false, self.inference_gate_mode());
        let (tokens, seq) = caption_tokens(&self.vocab, caption)?;
        let out = bound.forward(&mut graph, features, &seq, &mut NoNoise)?;
        let gates: Vec<f64> = out.gates.iter().map(|&z| graph.value(z).item()).collect();
        Ok(Inference {
            embedding: graph.value(out.embedding).data().to_vec(),
            tokens: if gates.is_empty() { Vec::new() } else { tokens },
            gates,
        })
    }
}

impl BoundModel {
    /// Fused embedding `f` for one observation.
    pub fn forward(
        &self,
        graph: &mut Graph,
        features: &[f64],
        seq: &TokenSequence,
        noise: &mut dyn GateNoise,
    ) -> Result<ForwardNodes> {
        let want = graph.shape(self.theta)[1] - graph.shape(self.w_fc)[0];
        if features.len() != want {
            return Err(Error::shape("forward", &[features.len()], &[want]));
        }
        let visual = graph.constant(Tensor::vector(features));
        match &self.text {
            Some((table, encoder)) => {
                let embedded = embed(graph, *table, seq)?;
                let enc = encode_sequence(graph, encoder, &embedded, visual, noise)?;
                let embedding = fuse(graph, self.w_fc, self.b_fc, enc.final_hidden, visual)?;
                Ok(ForwardNodes {
                    embedding,
                    gates: enc.gates,
                })
            }
            None => Ok(ForwardNodes {
                embedding: fuse(graph, self.w_fc, self.b_fc, visual, visual)?,
                gates: Vec::new(),
            }),
        }
    }
}
