use rand::Rng;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Activation applied to the cell candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CandidateActivation {
    Tanh,
    /// Sigmoid candidate instead of tanh.
    Sigmoid,
}

/// Weights of one LSTM layer with a forget gate.
///
/// Gates are stored in the order input, forget, output, candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_o: Tensor,
    pub w_c: Tensor,
    pub u_i: Tensor,
    pub u_f: Tensor,
    pub u_o: Tensor,
    pub u_c: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_o: Tensor,
    pub b_c: Tensor,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, input_dim]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        LstmParams {
            w_i: w(),
            w_f: w(),
            w_o: w(),
            w_c: w(),
            u_i: u(),
            u_f: u(),
            u_o: u(),
            u_c: u(),
            b_i: b(),
            b_f: b(),
            b_o: b(),
            b_c: b(),
        }
    }

    /// Matrices uniform in `[-1/√h, 1/√h]`, biases zero except the forget
    /// bias, which starts at 1.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut p = Self::zeros(input_dim, hidden);
        for t in p.weights_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-bound..=bound));
        }
        p.b_f.data_mut().iter_mut().for_each(|x| *x = 1.0);
        p
    }

    fn weights_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_c,
            &mut self.u_i,
            &mut self.u_f,
            &mut self.u_o,
            &mut self.u_c,
        ]
    }

    pub fn input_dim(&self) -> usize {
        self.w_i.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.w_i.shape()[0]
    }

    pub fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.w_i, &self.w_f, &self.w_o, &self.w_c, &self.u_i, &self.u_f, &self.u_o, &self.u_c,
            &self.b_i, &self.b_f, &self.b_o, &self.b_c,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_c,
            &mut self.u_i,
            &mut self.u_f,
            &mut self.u_o,
            &mut self.u_c,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_c,
        ]
    }

    pub const NAMES: [&'static str; 12] = [
        "w_i", "w_f", "w_o", "w_c", "u_i", "u_f", "u_o", "u_c", "b_i", "b_f", "b_o", "b_c",
    ];

    pub fn validate(&self) -> Result<()> {
        let (h, d) = (self.hidden(), self.input_dim());
        for (name, t) in Self::NAMES.iter().zip(self.tensors()) {
            let want: &[usize] = match name.as_bytes()[0] {
                b'w' => &[h, d],
                b'u' => &[h, h],
                _ => &[h],
            };
            if t.shape() != want {
                return Err(Error::invalid(format!(
                    "lstm {name} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// [`LstmParams`] registered on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LstmNodes {
    w: [NodeId; 4],
    u: [NodeId; 4],
    b: [NodeId; 4],
    hidden: usize,
    candidate: CandidateActivation,
}

impl LstmNodes {
    /// `ids` are the nodes of [`LstmParams::tensors`], in that order.
    pub fn from_ids(ids: &[NodeId], hidden: usize, candidate: CandidateActivation) -> Self {
        assert_eq!(ids.len(), 12);
        LstmNodes {
            w: [ids[0], ids[1], ids[2], ids[3]],
            u: [ids[4], ids[5], ids[6], ids[7]],
            b: [ids[8], ids[9], ids[10], ids[11]],
            hidden,
            candidate,
        }
    }

    pub fn bind(
        graph: &mut Graph,
        params: &LstmParams,
        trainable: bool,
        candidate: CandidateActivation,
    ) -> Self {
        let ids: Vec<NodeId> = params
            .tensors()
            .iter()
            .map(|t| graph.leaf((*t).clone(), trainable))
            .collect();
        Self::from_ids(&ids, params.hidden(), candidate)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Zero initial `(h, c)`.
    pub fn initial_state(&self, graph: &mut Graph) -> (NodeId, NodeId) {
        let h = graph.constant(Tensor::zeros(&[self.hidden]));
        let c = graph.constant(Tensor::zeros(&[self.hidden]));
        (h, c)
    }

    fn pre_activation(
        &self,
        graph: &mut Graph,
        gate: usize,
        x: NodeId,
        h_prev: NodeId,
    ) -> Result<NodeId> {
        let wx = graph.affine(self.w[gate], x, self.b[gate])?;
        let uh = graph.matmul(self.u[gate], h_prev)?;
        graph.add(wx, uh)
    }

    /// One cell update; returns `(h, c)`.
    pub fn step(
        &self,
        graph: &mut Graph,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let pre_i = self.pre_activation(graph, 0, x, h_prev)?;
        let i = graph.sigmoid(pre_i);
        let pre_f = self.pre_activation(graph, 1, x, h_prev)?;
        let f = graph.sigmoid(pre_f);
        let pre_o = self.pre_activation(graph, 2, x, h_prev)?;
        let o = graph.sigmoid(pre_o);
        let pre_c = self.pre_activation(graph, 3, x, h_prev)?;
        let cand = match self.candidate {
            CandidateActivation::Tanh => graph.tanh(pre_c),
            CandidateActivation::Sigmoid => graph.sigmoid(pre_c),
        };
        let keep = graph.mul(f, c_prev)?;
        let write = graph.mul(i, cand)?;
        let c = graph.add(keep, write)?;
        let squashed = graph.tanh(c);
        let h = graph.mul(o, squashed)?;
        Ok((h, c))
    }
}

/// Single cell step on plain tensors.
pub fn lstm_cell_step(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    params: &LstmParams,
    candidate: CandidateActivation,
) -> Result<(Tensor, Tensor)> {
    params.validate()?;
    let mut g = Graph::new();
    let nodes = LstmNodes::bind(&mut g, params, false, candidate);
    let x = g.constant(x.clone());
    let h = g.constant(h_prev.clone());
    let c = g.constant(c_prev.clone());
    let (h, c) = nodes.step(&mut g, x, h, c)?;
    Ok((g.value(h).clone(), g.value(c).clone()))
}
