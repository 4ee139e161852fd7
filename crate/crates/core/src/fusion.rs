//! Language/visual fusion and the joint identification + triplet objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Reduction of the caption state and the identity classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    /// `[r, h]`
    pub w_fc: Tensor,
    /// `[r]`
    pub b_fc: Tensor,
    /// `[K, r + dim F]`, no bias.
    pub theta: Tensor,
}

impl FusionParams {
    pub fn init<R: Rng + ?Sized>(
        hidden: usize,
        reduced: usize,
        visual_dim: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let b = 1.0 / (hidden as f64).sqrt();
        let w_fc = Tensor::from_fn(&[reduced, hidden], || rng.random_range(-b..=b));
        let fused = reduced + visual_dim;
        let b = 1.0 / (fused as f64).sqrt();
        let theta = Tensor::from_fn(&[classes, fused], || rng.random_range(-b..=b));
        FusionParams {
            w_fc,
            b_fc: Tensor::zeros(&[reduced]),
            theta,
        }
    }

    pub fn reduced_dim(&self) -> usize {
        self.w_fc.shape()[0]
    }

    pub fn fused_dim(&self) -> usize {
        self.theta.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.theta.shape()[0]
    }
}

/// `f = concat(W_fc · h + b_fc, F)`.
pub fn fuse(
    graph: &mut Graph,
    w_fc: NodeId,
    b_fc: NodeId,
    h_final: NodeId,
    visual: NodeId,
) -> Result<NodeId> {
    let reduced = graph.affine(w_fc, h_final, b_fc)?;
    graph.concat(&[reduced, visual])
}

/// Softmax cross-entropy of the linear classifier `theta · f` against `label`.
pub fn id_loss(graph: &mut Graph, f: NodeId, label: usize, theta: NodeId) -> Result<NodeId> {
    let classes = graph.shape(theta)[0];
    if label >= classes {
        return Err(Error::domain(
            "id_loss",
            format!("label {label} out of range for {classes} classes"),
        ));
    }
    let logits = graph.matmul(theta, f)?;
    graph.softmax_cross_entropy(logits, label)
}

/// `max(‖a − p‖² − ‖a − n‖² + α, 0)`.
pub fn triplet_loss(
    graph: &mut Graph,
    anchor: NodeId,
    positive: NodeId,
    negative: NodeId,
    alpha: f64,
) -> Result<NodeId> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::invalid(format!(
            "triplet margin must be non-negative, got {alpha}"
        )));
    }
    let dp = graph.squared_euclidean(anchor, positive)?;
    let dn = graph.squared_euclidean(anchor, negative)?;
    hinge(graph, dp, dn, alpha)
}

fn hinge(graph: &mut Graph, dp: NodeId, dn: NodeId, alpha: f64) -> Result<NodeId> {
    let diff = graph.sub(dp, dn)?;
    let shifted = graph.add_const(diff, &Tensor::scalar(alpha))?;
    Ok(graph.relu(shifted))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub triplet: bool,
    /// L2-normalize embeddings before the triplet distance.
    pub normalize_for_triplet: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.3,
            triplet: true,
            normalize_for_triplet: false,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub id: NodeId,
    pub triplet: Option<NodeId>,
}

/// Hardest positive and hardest negative of every anchor under `dist`.
///
/// Ties go to the lowest index. Returns an error if some anchor has no
/// positive or no negative.
pub fn batch_hard_pairs(
    labels: &[usize],
    dist: impl Fn(usize, usize) -> f64,
) -> Result<Vec<(usize, usize, usize)>> {
    let n = labels.len();
    let mut out = Vec::with_capacity(n);
    for a in 0..n {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist(a, j);
            if labels[j] == labels[a] {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        match (pos, neg) {
            (Some((p, _)), Some((q, _))) => out.push((a, p, q)),
            (None, _) => {
                return Err(Error::invalid(format!(
                    "identity {} has no positive in the batch",
                    labels[a]
                )))
            }
            (_, None) => {
                return Err(Error::invalid(
                    "batch contains a single identity; no negatives",
                ))
            }
        }
    }
    Ok(out)
}

/// Mean identification loss plus (optionally) mean batch-hard triplet loss,
/// summed without weights.
pub fn total_loss(
    graph: &mut Graph,
    embeddings: &[NodeId],
    labels: &[usize],
    theta: NodeId,
    config: &LossConfig,
) -> Result<LossNodes> {
    if embeddings.is_empty() || embeddings.len() != labels.len() {
        return Err(Error::invalid(format!(
            "batch has {} embeddings and {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let ids: Vec<NodeId> = embeddings
        .iter()
        .zip(labels)
        .map(|(&f, &y)| id_loss(graph, f, y, theta))
        .collect::<Result<_>>()?;
    let id = graph.mean_n(&ids)?;
    if !config.triplet {
        return Ok(LossNodes {
            total: id,
            id,
            triplet: None,
        });
    }
    if config.alpha.is_nan() || config.alpha < 0.0 {
        return Err(Error::invalid(format!(
            "triplet margin must be non-negative, got {}",
            config.alpha
        )));
    }

    let points: Vec<NodeId> = if config.normalize_for_triplet {
        embeddings
            .iter()
            .map(|&f| graph.l2_normalize(f))
            .collect::<Result<_>>()?
    } else {
        embeddings.to_vec()
    };
    let n = points.len();
    let mut dist = vec![None; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = graph.squared_euclidean(points[i], points[j])?;
            dist[i * n + j] = Some(d);
            dist[j * n + i] = Some(d);
        }
    }
    let node = |i: usize, j: usize| dist[i * n + j].expect("off-diagonal distance");
    let triplets = batch_hard_pairs(labels, |i, j| graph.value(node(i, j)).item())?;
    let hinges: Vec<NodeId> = triplets
        .into_iter()
        .map(|(a, p, q)| hinge(graph, node(a, p), node(a, q), config.alpha))
        .collect::<Result<_>>()?;
    let triplet = graph.mean_n(&hinges)?;
    let total = graph.add(id, triplet)?;
    Ok(LossNodes {
        total,
        id,
        triplet: Some(triplet),
    })
}
