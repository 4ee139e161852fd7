//! Visually conditioned Gumbel-sigmoid boundary gates.
//!
//! The relaxed gate is the binary-concrete sample `σ((a + g₁ − g₂) / τ)`,
//! which is the two-way Gumbel-softmax over the logits `(a, 0)`. The
//! difference of two standard Gumbel variates is standard logistic, so the
//! hard gate opens with probability exactly `σ(a)` for every `τ > 0`.

use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Relaxed sample in `[0, 1]`.
    Soft,
    /// Thresholded at 0.5 on the forward pass, straight-through gradient
    /// from the relaxed sample.
    #[default]
    Hard,
    ForcedOpen,
    ForcedClosed,
}

/// Source of the logistic perturbation `g₁ − g₂`.
pub trait GateNoise {
    /// `None` disables noise.
    fn sample(&mut self) -> Option<f64>;
}

/// Deterministic gates: no perturbation.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoNoise;

impl GateNoise for NoNoise {
    fn sample(&mut self) -> Option<f64> {
        None
    }
}

/// Draws `g₁ − g₂` with `g₁, g₂` i.i.d. standard Gumbel.
#[derive(Debug)]
pub struct GumbelNoise<R>(pub R);

pub fn standard_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

impl<R: Rng> GateNoise for GumbelNoise<R> {
    fn sample(&mut self) -> Option<f64> {
        let g1 = standard_gumbel(&mut self.0);
        let g2 = standard_gumbel(&mut self.0);
        Some(g1 - g2)
    }
}

impl<T: GateNoise + ?Sized> GateNoise for &mut T {
    fn sample(&mut self) -> Option<f64> {
        (**self).sample()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(
            "gumbel_sigmoid",
            format!("temperature must be positive, got {tau}"),
        ))
    }
}

/// Scalar Gumbel-sigmoid sample of a logit.
pub fn gumbel_sigmoid(logit: f64, tau: f64, noise: &mut dyn GateNoise, hard: bool) -> Result<f64> {
    check_tau(tau)?;
    let perturbed = logit + noise.sample().unwrap_or(0.0);
    let soft = sigmoid(perturbed / tau);
    Ok(if hard { threshold(soft) } else { soft })
}

fn threshold(soft: f64) -> f64 {
    if soft >= 0.5 {
        1.0
    } else {
        0.0
    }
}

/// Gate node for a scalar logit node under `mode`. Forced modes consume no noise.
pub fn gate_from_logit(
    graph: &mut Graph,
    logit: NodeId,
    tau: f64,
    mode: GateMode,
    noise: &mut dyn GateNoise,
) -> Result<NodeId> {
    check_tau(tau)?;
    match mode {
        GateMode::ForcedOpen => return Ok(graph.constant(Tensor::scalar(1.0))),
        GateMode::ForcedClosed => return Ok(graph.constant(Tensor::scalar(0.0))),
        GateMode::Soft | GateMode::Hard => {}
    }
    let perturbed = match noise.sample() {
        Some(n) => graph.add_const(logit, &Tensor::scalar(n))?,
        None => logit,
    };
    let scaled = graph.scale(perturbed, 1.0 / tau);
    let soft = graph.sigmoid(scaled);
    if mode == GateMode::Soft {
        return Ok(soft);
    }
    let hard = threshold(graph.value(soft).item());
    graph.straight_through(soft, Tensor::scalar(hard))
}

/// Learned scalar projection of `concat(h_lower, F)` plus gate settings.
///
/// `w_z` is stored as a `[1, n]` row so that the logit is a plain affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub w_z: Tensor,
    pub b_z: Tensor,
    /// Optional `[p, dim F]` reduction applied to `F` before it enters the gate.
    pub visual_projection: Option<Tensor>,
    pub tau: f64,
    pub mode: GateMode,
}

pub const DEFAULT_TAU: f64 = 0.3;
pub const DEFAULT_GATE_BIAS: f64 = 2.0;

impl GateParams {
    /// `w_z` uniform in `[-1/√n, 1/√n]`, `b_z = 2` so gates start mostly open.
    pub fn init<R: Rng + ?Sized>(
        hidden: usize,
        visual_dim: usize,
        projection: Option<usize>,
        tau: f64,
        mode: GateMode,
        rng: &mut R,
    ) -> Result<Self> {
        check_tau(tau)?;
        let visual_projection = projection.map(|p| {
            let bound = 1.0 / (visual_dim as f64).sqrt();
            Tensor::from_fn(&[p, visual_dim], || rng.random_range(-bound..=bound))
        });
        let n = hidden + projection.unwrap_or(visual_dim);
        let bound = 1.0 / (n as f64).sqrt();
        Ok(GateParams {
            w_z: Tensor::from_fn(&[1, n], || rng.random_range(-bound..=bound)),
            b_z: Tensor::scalar(DEFAULT_GATE_BIAS),
            visual_projection,
            tau,
            mode,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.shape()[1]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.w_z, &self.b_z];
        v.extend(self.visual_projection.as_ref());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.w_z, &mut self.b_z];
        v.extend(self.visual_projection.as_mut());
        v
    }
}

/// [`GateParams`] registered on a graph.
#[derive(Clone, Copy, Debug)]
pub struct GateNodes {
    pub w_z: NodeId,
    pub b_z: NodeId,
    pub visual_projection: Option<NodeId>,
    pub tau: f64,
    pub mode: GateMode,
}

impl GateNodes {
    /// `ids` are the nodes of [`GateParams::tensors`], in that order.
    pub fn from_ids(ids: &[NodeId], tau: f64, mode: GateMode) -> Self {
        GateNodes {
            w_z: ids[0],
            b_z: ids[1],
            visual_projection: ids.get(2).copied(),
            tau,
            mode,
        }
    }

    /// The visual part of the gate input: `F`, or its projection.
    pub fn visual_input(&self, graph: &mut Graph, visual: NodeId) -> Result<NodeId> {
        match self.visual_projection {
            Some(p) => graph.matmul(p, visual),
            None => Ok(visual),
        }
    }

    /// `z_t` from the lower-layer hidden state and the (possibly projected)
    /// visual feature.
    pub fn boundary_gate(
        &self,
        graph: &mut Graph,
        h_lower: NodeId,
        visual_input: NodeId,
        noise: &mut dyn GateNoise,
    ) -> Result<NodeId> {
        let want = graph.shape(self.w_z)[1];
        let have = graph.value(h_lower).numel() + graph.value(visual_input).numel();
        if want != have {
            return Err(Error::shape(
                "boundary_gate",
                graph.shape(self.w_z),
                &[
                    graph.value(h_lower).numel(),
                    graph.value(visual_input).numel(),
                ],
            ));
        }
        if matches!(self.mode, GateMode::ForcedOpen | GateMode::ForcedClosed) {
            return gate_from_logit(graph, h_lower, self.tau, self.mode, noise);
        }
        let joint = graph.concat(&[h_lower, visual_input])?;
        let logit = graph.affine(self.w_z, joint, self.b_z)?;
        gate_from_logit(graph, logit, self.tau, self.mode, noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixed(f64);
    impl GateNoise for Fixed {
        fn sample(&mut self) -> Option<f64> {
            Some(self.0)
        }
    }

    #[test]
    fn noiseless_limit() {
        let z = gumbel_sigmoid(0.3, 0.3, &mut NoNoise, false).unwrap();
        assert!((z - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn tau_must_be_positive() {
        assert!(gumbel_sigmoid(0.0, 0.0, &mut NoNoise, false).is_err());
        assert!(gumbel_sigmoid(0.0, -1.0, &mut NoNoise, true).is_err());
    }

    #[test]
    fn hard_output_is_binary() {
        let mut noise = GumbelNoise(ChaCha8Rng::seed_from_u64(1));
        for i in 0..2000 {
            let a = (i as f64 - 1000.0) / 200.0;
            let z = gumbel_sigmoid(a, 0.3, &mut noise, true).unwrap();
            assert!(z == 0.0 || z == 1.0);
        }
    }

    #[test]
    fn symmetric_logit_opens_half_the_time() {
        let mut noise = GumbelNoise(ChaCha8Rng::seed_from_u64(11));
        let n = 100_000;
        let open: f64 = (0..n)
            .map(|_| gumbel_sigmoid(0.0, 0.3, &mut noise, true).unwrap())
            .sum();
        assert!((open / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn soft_gate_monotone_in_logit() {
        for noise in [-2.0, -0.1, 0.0, 0.7, 3.0] {
            let mut prev = -1.0;
            for i in 0..200 {
                let a = (i as f64 - 100.0) / 40.0;
                let z = gumbel_sigmoid(a, 0.3, &mut Fixed(noise), false).unwrap();
                assert!(
                    z > prev || (z == 1.0 && prev == 1.0),
                    "a={a} z={z} prev={prev}"
                );
                prev = z;
            }
        }
    }

    #[test]
    fn low_temperature_approaches_step() {
        let cases = [(0.4, -0.1), (-0.5, 0.2), (1.0, -0.8), (-0.05, -0.1)];
        for (a, n) in cases {
            let step = if a + n >= 0.0 { 1.0 } else { 0.0 };
            let errs: Vec<f64> = [1.0, 0.3, 0.01]
                .iter()
                .map(|&tau| (gumbel_sigmoid(a, tau, &mut Fixed(n), false).unwrap() - step).abs())
                .collect();
            assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
            assert!(errs[2] < 1e-4, "{errs:?}");
        }
    }

    #[test]
    fn forced_modes_ignore_inputs_and_noise() {
        let mut g = Graph::new();
        let nodes = GateNodes {
            w_z: g.param(Tensor::full(&[1, 3], 5.0)),
            b_z: g.param(Tensor::scalar(-100.0)),
            visual_projection: None,
            tau: 0.3,
            mode: GateMode::ForcedOpen,
        };
        let h = g.constant(Tensor::vector(&[1.0, 2.0]));
        let f = g.constant(Tensor::vector(&[3.0]));
        struct Panics;
        impl GateNoise for Panics {
            fn sample(&mut self) -> Option<f64> {
                panic!("forced gates must not draw noise")
            }
        }
        let z = nodes.boundary_gate(&mut g, h, f, &mut Panics).unwrap();
        assert_eq!(g.value(z).item(), 1.0);
        let closed = GateNodes {
            mode: GateMode::ForcedClosed,
            ..nodes
        };
        let z = closed.boundary_gate(&mut g, h, f, &mut Panics).unwrap();
        assert_eq!(g.value(z).item(), 0.0);
    }

    #[test]
    fn zero_projection_gives_half() {
        let mut g = Graph::new();
        let nodes = GateNodes {
            w_z: g.param(Tensor::zeros(&[1, 3])),
            b_z: g.param(Tensor::scalar(0.0)),
            visual_projection: None,
            tau: 0.3,
            mode: GateMode::Soft,
        };
        let h = g.constant(Tensor::vector(&[1.0, 2.0]));
        let f = g.constant(Tensor::vector(&[3.0]));
        let z = nodes.boundary_gate(&mut g, h, f, &mut NoNoise).unwrap();
        assert_eq!(g.value(z).item(), 0.5);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut g = Graph::new();
        let nodes = GateNodes {
            w_z: g.param(Tensor::zeros(&[1, 4])),
            b_z: g.param(Tensor::scalar(0.0)),
            visual_projection: None,
            tau: 0.3,
            mode: GateMode::Soft,
        };
        let h = g.constant(Tensor::vector(&[1.0, 2.0]));
        let f = g.constant(Tensor::vector(&[3.0]));
        assert!(matches!(
            nodes.boundary_gate(&mut g, h, f, &mut NoNoise),
            Err(Error::Shape {
                op: "boundary_gate",
                ..
            })
        ));
    }
}
