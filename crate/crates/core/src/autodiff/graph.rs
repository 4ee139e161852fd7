//! Reverse-mode differentiation over an append-only operation list.
//!
//! Nodes only ever reference nodes created before them, so insertion order is
//! a topological order and the backward sweep is a single reverse pass.
//! Gradients accumulate into per-node buffers; a fresh [`Graph`] is built for
//! every forward evaluation.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Concat(Vec<NodeId>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Relu(NodeId),
    Sum(NodeId),
    AddN(Vec<NodeId>),
    SoftmaxCrossEntropy {
        logits: NodeId,
        label: usize,
        probs: Vec<f64>,
    },
    SquaredEuclidean(NodeId, NodeId),
    Affine(NodeId, NodeId, NodeId),
    GatherRow {
        table: NodeId,
        row: usize,
    },
    StraightThrough(NodeId),
    L2Normalize {
        input: NodeId,
        norm: f64,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Reverse-mode tape. See the module docs.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn broadcast_shape<'a>(op: &'static str, a: &'a Tensor, b: &'a Tensor) -> Result<&'a [usize]> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape())
    } else if a.is_scalar() {
        Ok(b.shape())
    } else {
        Err(Error::shape(op, a.shape(), b.shape()))
    }
}

#[inline]
fn at(t: &Tensor, i: usize) -> f64 {
    if t.is_scalar() {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient accumulated at `id` by the last [`Graph::backward`]; zeros when
    /// the node was not reached.
    pub fn grad(&self, id: NodeId) -> Tensor {
        let value = &self.nodes[id.0].value;
        match &self.grads[id.0] {
            Some(g) => Tensor::new(value.shape().to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// `a · b` for `a: [m, k]` and `b: [k]` or `b: [k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let value = matmul_forward(va, vb)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(op_name, va, vb)?.to_vec();
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|i| f(at(va, i), at(vb, i))).collect();
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(op, value, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise (Hadamard) product; either side may be a scalar.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("hadamard", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a);
        let value = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|x| x * factor).collect(),
        )
        .unwrap();
        let rg = self.rg(&[a]);
        self.push(Op::Scale(a, factor), value, rg)
    }

    /// `a + c` where `c` is a constant with `a`'s shape or a scalar.
    pub fn add_const(&mut self, a: NodeId, c: &Tensor) -> Result<NodeId> {
        let va = self.value(a);
        if va.shape() != c.shape() && !c.is_scalar() {
            return Err(Error::shape("add_const", va.shape(), c.shape()));
        }
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + at(c, i))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::AddConst(a), value, rg))
    }

    /// Concatenates rank-1 tensors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 1 {
                return Err(Error::shape("concat", v.shape(), &[v.numel()]));
            }
            data.extend_from_slice(v.data());
        }
        let value = Tensor::new(vec![data.len()], data)?;
        let rg = self.rg(parts);
        Ok(self.push(Op::Concat(parts.to_vec()), value, rg))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let v = self.value(a);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())
            .expect("unary shape");
        let rg = self.rg(&[a]);
        self.push(op, value, rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(x) = self
            .value(a)
            .data()
            .iter()
            .find(|&&x| x.is_nan() || x <= 0.0)
        {
            return Err(Error::domain("log", format!("non-positive input {x}")));
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    /// `max(x, 0)`; the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    /// Sum of equally shaped tensors, accumulated left to right.
    pub fn add_n(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let first = *terms
            .first()
            .ok_or_else(|| Error::invalid("add_n of zero tensors"))?;
        let mut acc = self.value(first).clone();
        for &t in &terms[1..] {
            let v = self.value(t);
            if v.shape() != acc.shape() {
                return Err(Error::shape("add_n", acc.shape(), v.shape()));
            }
            acc.data_mut()
                .iter_mut()
                .zip(v.data())
                .for_each(|(x, y)| *x += y);
        }
        let rg = self.rg(terms);
        Ok(self.push(Op::AddN(terms.to_vec()), acc, rg))
    }

    /// Arithmetic mean of equally shaped tensors.
    pub fn mean_n(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let total = self.add_n(terms)?;
        Ok(self.scale(total, 1.0 / terms.len() as f64))
    }

    /// `-log softmax(logits)[label]`, computed with max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let v = self.value(logits);
        if v.shape().len() != 1 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                v.shape(),
                &[v.numel()],
            ));
        }
        if label >= v.numel() {
            return Err(Error::domain(
                "softmax_cross_entropy",
                format!("label {label} out of range for {} classes", v.numel()),
            ));
        }
        let max = v.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.data().iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = z.ln() - (v.data()[label] - max);
        let probs = exps.into_iter().map(|e| e / z).collect();
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// `‖a − b‖²` as a scalar.
    pub fn squared_euclidean(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("squared_euclidean", va.shape(), vb.shape()));
        }
        let d = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::SquaredEuclidean(a, b), Tensor::scalar(d), rg))
    }

    /// `w · x + b` for `w: [m, k]`, `x: [k]`, `b: [m]`.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (vw, vx, vb) = (self.value(w), self.value(x), self.value(b));
        if vx.shape().len() != 1 {
            return Err(Error::shape("affine", vw.shape(), vx.shape()));
        }
        let mut out = matmul_forward(vw, vx)?;
        if out.shape() != vb.shape() {
            return Err(Error::shape("affine", out.shape(), vb.shape()));
        }
        out.data_mut()
            .iter_mut()
            .zip(vb.data())
            .for_each(|(o, b)| *o += b);
        let rg = self.rg(&[w, x, b]);
        Ok(self.push(Op::Affine(w, x, b), out, rg))
    }

    /// Row `row` of a rank-2 table, as a rank-1 tensor (embedding lookup).
    pub fn gather_row(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::shape("gather_row", t.shape(), &[row]));
        }
        if row >= t.rows() {
            return Err(Error::domain(
                "gather_row",
                format!("row {row} out of range for table with {} rows", t.rows()),
            ));
        }
        let value = Tensor::vector(t.row(row));
        let rg = self.rg(&[table]);
        Ok(self.push(Op::GatherRow { table, row }, value, rg))
    }

    /// Forward value is `forward`; the backward pass routes the incoming
    /// gradient unchanged to `soft`.
    pub fn straight_through(&mut self, soft: NodeId, forward: Tensor) -> Result<NodeId> {
        if self.shape(soft) != forward.shape() {
            return Err(Error::shape(
                "straight_through",
                self.shape(soft),
                forward.shape(),
            ));
        }
        let rg = self.rg(&[soft]);
        Ok(self.push(Op::StraightThrough(soft), forward, rg))
    }

    /// `a / ‖a‖₂`. Rejects the zero vector.
    pub fn l2_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let norm = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm.is_nan() || norm <= 0.0 {
            return Err(Error::domain("l2_normalize", "zero-norm input"));
        }
        let value = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|x| x / norm).collect(),
        )?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::L2Normalize { input: a, norm }, value, rg))
    }

    /// Accumulates `d loss / d node` into every node that requires a gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0].get_or_insert_with(|| vec![0.0])[0] += 1.0;

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let acc = |grads: &mut [Option<Vec<f64>>], id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            accumulate(nodes, grads, id, f)
        };
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let va = &nodes[a.0].value;
                let vb = &nodes[b.0].value;
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = if vb.shape().len() == 1 {
                    1
                } else {
                    vb.shape()[1]
                };
                acc(grads, *a, &mut |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * vb.data()[p * n + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                acc(grads, *b, &mut |gb| {
                    for i in 0..m {
                        let arow = &va.data()[i * k..(i + 1) * k];
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                gb[p * n + j] += arow[p] * gij;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                route_broadcast(nodes, grads, *a, g, |_| 1.0);
                route_broadcast(nodes, grads, *b, g, |_| 1.0);
            }
            Op::Sub(a, b) => {
                route_broadcast(nodes, grads, *a, g, |_| 1.0);
                route_broadcast(nodes, grads, *b, g, |_| -1.0);
            }
            Op::Mul(a, b) => {
                let va = &nodes[a.0].value;
                let vb = &nodes[b.0].value;
                route_broadcast(nodes, grads, *a, g, |i| at(vb, i));
                route_broadcast(nodes, grads, *b, g, |i| at(va, i));
            }
            Op::Scale(a, c) => acc(grads, *a, &mut |ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += *c * y);
            }),
            Op::AddConst(a) => acc(grads, *a, &mut |ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = nodes[p.0].value.numel();
                    let slice = &g[offset..offset + n];
                    acc(grads, *p, &mut |gp| {
                        gp.iter_mut().zip(slice).for_each(|(x, y)| *x += y);
                    });
                    offset += n;
                }
            }
            Op::Sigmoid(a) => {
                let out = &nodes[idx].value;
                acc(grads, *a, &mut |ga| {
                    for ((x, s), y) in ga.iter_mut().zip(out.data()).zip(g) {
                        *x += y * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh(a) => {
                let out = &nodes[idx].value;
                acc(grads, *a, &mut |ga| {
                    for ((x, t), y) in ga.iter_mut().zip(out.data()).zip(g) {
                        *x += y * (1.0 - t * t);
                    }
                });
            }
            Op::Log(a) => {
                let input = &nodes[a.0].value;
                acc(grads, *a, &mut |ga| {
                    for ((x, v), y) in ga.iter_mut().zip(input.data()).zip(g) {
                        *x += y / v;
                    }
                });
            }
            Op::Exp(a) => {
                let out = &nodes[idx].value;
                acc(grads, *a, &mut |ga| {
                    for ((x, e), y) in ga.iter_mut().zip(out.data()).zip(g) {
                        *x += y * e;
                    }
                });
            }
            Op::Relu(a) => {
                let input = &nodes[a.0].value;
                acc(grads, *a, &mut |ga| {
                    for ((x, v), y) in ga.iter_mut().zip(input.data()).zip(g) {
                        if *v > 0.0 {
                            *x += y;
                        }
                    }
                });
            }
            Op::Sum(a) => acc(grads, *a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::AddN(terms) => {
                for t in terms {
                    acc(grads, *t, &mut |gt| {
                        gt.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    });
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => acc(grads, *logits, &mut |gl| {
                for (k, (x, p)) in gl.iter_mut().zip(probs).enumerate() {
                    let target = if k == *label { 1.0 } else { 0.0 };
                    *x += g[0] * (p - target);
                }
            }),
            Op::SquaredEuclidean(a, b) => {
                let diff: Vec<f64> = nodes[a.0]
                    .value
                    .data()
                    .iter()
                    .zip(nodes[b.0].value.data())
                    .map(|(x, y)| 2.0 * (x - y) * g[0])
                    .collect();
                acc(grads, *a, &mut |ga| {
                    ga.iter_mut().zip(&diff).for_each(|(x, d)| *x += d)
                });
                acc(grads, *b, &mut |gb| {
                    gb.iter_mut().zip(&diff).for_each(|(x, d)| *x -= d)
                });
            }
            Op::Affine(w, x, b) => {
                let vw = &nodes[w.0].value;
                let vx = &nodes[x.0].value;
                let (m, k) = (vw.shape()[0], vw.shape()[1]);
                acc(grads, *w, &mut |gw| {
                    for i in 0..m {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &mut gw[i * k..(i + 1) * k];
                        row.iter_mut()
                            .zip(vx.data())
                            .for_each(|(r, xv)| *r += gi * xv);
                    }
                });
                acc(grads, *x, &mut |gx| {
                    for (i, &gi) in g.iter().enumerate() {
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &vw.data()[i * k..(i + 1) * k];
                        gx.iter_mut().zip(row).for_each(|(xg, wv)| *xg += gi * wv);
                    }
                });
                acc(grads, *b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
            }
            Op::GatherRow { table, row } => {
                let cols = nodes[table.0].value.shape()[1];
                acc(grads, *table, &mut |gt| {
                    gt[*row * cols..(*row + 1) * cols]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(x, y)| *x += y);
                });
            }
            Op::StraightThrough(soft) => acc(grads, *soft, &mut |gs| {
                gs.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }),
            Op::L2Normalize { input, norm } => {
                let out = &nodes[idx].value;
                let dot: f64 = out.data().iter().zip(g).map(|(u, y)| u * y).sum();
                acc(grads, *input, &mut |ga| {
                    for ((x, u), y) in ga.iter_mut().zip(out.data()).zip(g) {
                        *x += (y - u * dot) / *norm;
                    }
                });
            }
        }
    }
}

/// Routes `g * local(i)` into `target`, summing over broadcast positions
/// when `target` is a scalar operand of a larger result.
fn route_broadcast(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    target: NodeId,
    g: &[f64],
    local: impl Fn(usize) -> f64,
) {
    let scalar_target = nodes[target.0].value.is_scalar() && g.len() > 1;
    accumulate(nodes, grads, target, &mut |gt| {
        if scalar_target {
            gt[0] += g.iter().enumerate().map(|(i, y)| y * local(i)).sum::<f64>();
        } else {
            for (i, (x, y)) in gt.iter_mut().zip(g).enumerate() {
                *x += y * local(i);
            }
        }
    });
}

fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: NodeId,
    f: &mut dyn FnMut(&mut [f64]),
) {
    if !nodes[id.0].requires_grad {
        return;
    }
    let n = nodes[id.0].value.numel();
    f(grads[id.0].get_or_insert_with(|| vec![0.0; n]));
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() > 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (n, out_shape) = if b.shape().len() == 1 {
        (1, vec![m])
    } else {
        (b.shape()[1], vec![m, b.shape()[1]])
    };
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data()[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, bv)| *o += av * bv);
        }
    }
    Tensor::new(out_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).item(), 0.5);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).item(), 0.25);
    }

    #[test]
    fn concat_routes_gradient_back() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(&[1.0, 2.0]));
        let b = g.param(Tensor::vector(&[3.0, 4.0, 5.0]));
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[5]);
        let w = g.constant(Tensor::vector(&[1.0, 2.0, 3.0, 4.0, 5.0]));
        let p = g.mul(c, w).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).data(), &[1.0, 2.0]);
        assert_eq!(g.grad(b).data(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(&[0.3, -2.0, 7.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_times_x_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(&[0.3, -2.0]));
        let z = g.scale(x, 0.0);
        let s = g.sum(z);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn unreachable_param_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(&[1.0, 2.0]));
        let unused = g.param(Tensor::vector(&[5.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(unused).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(&[3, 4]));
        let b = g.param(Tensor::zeros(&[3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(
            err.contains("matmul") && err.contains("[3, 4]") && err.contains("[3]"),
            "{err}"
        );
        let c = g.param(Tensor::zeros(&[2]));
        let err = g.add(b, c).unwrap_err().to_string();
        assert!(
            err.contains("add") && err.contains("[3]") && err.contains("[2]"),
            "{err}"
        );
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(&[1.0, 0.0]));
        assert!(matches!(g.log(a), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn scalar_broadcast_sums_gradient() {
        let mut g = Graph::new();
        let v = g.param(Tensor::vector(&[1.0, 2.0, 3.0]));
        let s = g.param(Tensor::scalar(2.0));
        let p = g.mul(v, s).unwrap();
        let l = g.sum(p);
        g.backward(l).unwrap();
        assert!(close(g.grad(s).item(), 6.0));
        assert_eq!(g.grad(v).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(&[0.5, -1.5]));
        let t = g.tanh(x);
        let s1 = g.sum(t);
        let s2 = g.add(s1, s1).unwrap();
        g.backward(s2).unwrap();
        let expected: Vec<f64> = [0.5f64, -1.5]
            .iter()
            .map(|v| 2.0 * (1.0 - v.tanh().powi(2)))
            .collect();
        for (a, b) in g.grad(x).data().iter().zip(&expected) {
            assert!(close(*a, *b));
        }
    }

    #[test]
    fn straight_through_passes_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::scalar(0.2));
        let soft = g.sigmoid(a);
        let hard = g.straight_through(soft, Tensor::scalar(1.0)).unwrap();
        assert_eq!(g.value(hard).item(), 1.0);
        g.backward(hard).unwrap();
        let s = sigmoid(0.2);
        assert!(close(g.grad(a).item(), s * (1.0 - s)));
    }

    #[test]
    fn softmax_cross_entropy_uniform() {
        let mut g = Graph::new();
        let l = g.param(Tensor::vector(&[0.0; 4]));
        let loss = g.softmax_cross_entropy(l, 2).unwrap();
        assert!(close(g.value(loss).item(), 4f64.ln()));
        assert!(g.softmax_cross_entropy(l, 4).is_err());
    }
}
