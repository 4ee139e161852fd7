//! Finite-difference check of the whole training objective: word embedding
//! → gated two-layer encoder (soft gates, replayed noise) → fusion →
//! identification + triplet loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::encoder::{GateMode, GateNoise, GumbelNoise};
use crate::error::Result;
use crate::fusion::{total_loss, LossConfig};
use crate::model::{Model, ModelConfig};
use crate::text::{TokenSequence, Vocabulary};

/// One random configuration and its gradient-check result.
#[derive(Clone, Debug)]
pub struct PipelineCheck {
    pub seed: u64,
    pub config: ModelConfig,
    pub seq_lens: Vec<usize>,
    pub report: GradCheckReport,
}

struct Replay<'a> {
    samples: &'a [f64],
    next: usize,
}

impl GateNoise for Replay<'_> {
    fn sample(&mut self) -> Option<f64> {
        let s = self.samples[self.next % self.samples.len()];
        self.next += 1;
        Some(s)
    }
}

/// Draws dims in `1..=8`, a 2-identity × 2-sample batch with captions of
/// length `1..=5`, and gradient-checks every parameter tensor.
pub fn random_pipeline_check(seed: u64, options: &GradCheckOptions) -> Result<PipelineCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig {
        embed_dim: rng.random_range(1..=8),
        hidden: rng.random_range(1..=8),
        reduced: rng.random_range(1..=8),
        visual_dim: rng.random_range(1..=8),
        gate_mode: GateMode::Soft,
        gate_visual_projection: rng.random_bool(0.3).then(|| rng.random_range(1..=4)),
        sigmoid_candidate: rng.random_bool(0.3),
        ..ModelConfig::default()
    };
    let words: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::build(&words, 1)?;
    let classes = rng.random_range(2..=4);
    let mut model = Model::init(config.clone(), vocab.clone(), classes, &mut rng)?;
    // Start the gate near its steep region so the gate path carries gradient.
    if let Some(t) = &mut model.text {
        t.gate.b_z = Tensor::scalar(rng.random_range(-1.0..1.0));
    }

    let labels = [0usize, 0, 1, 1];
    let seq_lens: Vec<usize> = labels.iter().map(|_| rng.random_range(1..=5)).collect();
    let seqs: Vec<TokenSequence> = seq_lens
        .iter()
        .map(|&n| {
            TokenSequence::new(
                (0..n).map(|_| rng.random_range(0..vocab.len())).collect(),
                &vocab,
            )
        })
        .collect::<Result<_>>()?;
    let features: Vec<Vec<f64>> = labels
        .iter()
        .map(|_| {
            (0..config.visual_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect()
        })
        .collect();
    let mut gumbel = GumbelNoise(&mut rng);
    let noise: Vec<f64> = (0..seq_lens.iter().sum::<usize>())
        .map(|_| gumbel.sample().expect("gumbel noise"))
        .collect();

    let loss = LossConfig::default();
    let objective = |graph: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
        let bound = model.bind_nodes(ids.to_vec(), GateMode::Soft);
        let mut replay = Replay {
            samples: &noise,
            next: 0,
        };
        let mut embeddings = Vec::with_capacity(labels.len());
        for (f, s) in features.iter().zip(&seqs) {
            embeddings.push(bound.forward(graph, f, s, &mut replay)?.embedding);
        }
        Ok(total_loss(graph, &embeddings, &labels, bound.theta, &loss)?.total)
    };
    let params: Vec<Tensor> = model
        .named_tensors()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();
    let report = grad_check(objective, &params, options)?;
    Ok(PipelineCheck {
        seed,
        config,
        seq_lens,
        report,
    })
}
