//! Eager tape: every primitive computes its value immediately and records
//! its parents, so `backward` is a single reverse sweep over the node list.

use super::tensor::{gemm, sigmoid, softplus, Tensor};
use crate::error::{Error, Result};

/// Index of a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tag of a recorded node.
#[derive(Clone, Debug)]
pub enum Op {
    /// Parameter or constant input.
    Leaf,
    MatMul(NodeId, NodeId),
    /// Elementwise add; the smaller operand may broadcast over leading axes.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Neg(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    /// Concatenation along the last axis.
    Concat(Vec<NodeId>),
    Mean {
        input: NodeId,
        axis: usize,
    },
    /// Sum of every element, producing a scalar.
    Sum(NodeId),
    /// `[start, end)` along the last axis.
    Slice {
        input: NodeId,
        start: usize,
        end: usize,
    },
    Reshape {
        input: NodeId,
        shape: Vec<usize>,
    },
    /// Repeats a `[d]` or `[1, d]` tensor into `[rows, d]`.
    TileRows {
        input: NodeId,
        rows: usize,
    },
    GaussianNll {
        y: NodeId,
        mu: NodeId,
        sigma: NodeId,
    },
    CategoricalCe {
        logits: NodeId,
        labels: Vec<usize>,
    },
    /// Closed-form `KL(q ‖ p)` between diagonal Gaussians, summed over elements.
    KlDiagGaussian {
        mu_q: NodeId,
        sigma_q: NodeId,
        mu_p: NodeId,
        sigma_p: NodeId,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Neg(..) => "neg",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Concat(..) => "concat",
            Op::Mean { .. } => "mean",
            Op::Sum(..) => "sum",
            Op::Slice { .. } => "slice",
            Op::Reshape { .. } => "reshape",
            Op::TileRows { .. } => "tile_rows",
            Op::GaussianNll { .. } => "gaussian_nll",
            Op::CategoricalCe { .. } => "categorical_ce",
            Op::KlDiagGaussian { .. } => "kl_diag_gaussian",
        }
    }

    pub fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Neg(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sum(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
            Op::Mean { input, .. }
            | Op::Slice { input, .. }
            | Op::Reshape { input, .. }
            | Op::TileRows { input, .. } => {
                vec![*input]
            }
            Op::GaussianNll { y, mu, sigma } => vec![*y, *mu, *sigma],
            Op::CategoricalCe { logits, .. } => vec![*logits],
            Op::KlDiagGaussian {
                mu_q,
                sigma_q,
                mu_p,
                sigma_p,
            } => vec![*mu_q, *sigma_q, *mu_p, *sigma_p],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of eagerly evaluated operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient slots produced by [`Graph::backward`], one per node.
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.slots.get_mut(id.0).and_then(Option::take)
    }
}

// Which side of a binary op, if any, is broadcast over leading axes.
#[derive(Clone, Copy)]
enum Broadcast {
    None,
    Lhs(usize),
    Rhs(usize),
}

fn broadcast_rule(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Broadcast)> {
    if a == b {
        return Ok((a.to_vec(), Broadcast::None));
    }
    if b.len() < a.len() && a.ends_with(b) {
        return Ok((a.to_vec(), Broadcast::Rhs(b.iter().product())));
    }
    if a.len() < b.len() && b.ends_with(a) {
        return Ok((b.to_vec(), Broadcast::Lhs(a.iter().product())));
    }
    Err(Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

fn binary_map(a: &Tensor, b: &Tensor, shape: Vec<usize>, rule: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = match rule {
        Broadcast::None => a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Rhs(inner) => {
            let bd = b.data();
            a.data().iter().enumerate().map(|(i, &x)| f(x, bd[i % inner])).collect()
        }
        Broadcast::Lhs(inner) => {
            let ad = a.data();
            b.data().iter().enumerate().map(|(i, &y)| f(ad[i % inner], y)).collect()
        }
    };
    Tensor::new(shape, data).expect("broadcast shape")
}

/// Sums a full-size gradient down to a broadcast operand of `inner` elements.
fn reduce_broadcast(grad: &[f64], inner: usize, shape: &[usize]) -> Tensor {
    let mut out = vec![0.0; inner];
    for chunk in grad.chunks(inner) {
        for (o, g) in out.iter_mut().zip(chunk) {
            *o += g;
        }
    }
    Tensor::new(shape.to_vec(), out).expect("reduced shape")
}

fn accumulate(slots: &mut [Option<Tensor>], id: NodeId, grad: Tensor) {
    match &mut slots[id.0] {
        Some(existing) => {
            for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                *e += g;
            }
        }
        slot @ None => *slot = Some(grad),
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

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

    /// Adds a trainable leaf; backward always returns a gradient for it.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Adds a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Evaluates `op` on already recorded parents and appends the result.
    pub fn forward_primitive(&mut self, op: Op) -> Result<NodeId> {
        let parents = op.parents();
        if let Some(bad) = parents.iter().find(|p| p.0 >= self.nodes.len()) {
            return Err(Error::invalid(format!("unknown parent node {}", bad.0)));
        }
        let value = self.evaluate(&op)?;
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward_primitive(Op::MatMul(a, b))
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward_primitive(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward_primitive(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward_primitive(Op::Mul(a, b))
    }
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.forward_primitive(Op::Scale(a, factor))
    }
    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward_primitive(Op::Neg(a))
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward_primitive(Op::Tanh(a))
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward_primitive(Op::Relu(a))
    }
    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward_primitive(Op::Softplus(a))
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward_primitive(Op::Exp(a))
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward_primitive(Op::Log(a))
    }
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.forward_primitive(Op::Concat(parts.to_vec()))
    }
    pub fn mean(&mut self, input: NodeId, axis: usize) -> Result<NodeId> {
        self.forward_primitive(Op::Mean { input, axis })
    }
    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        self.forward_primitive(Op::Sum(input))
    }
    pub fn slice(&mut self, input: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.forward_primitive(Op::Slice { input, start, end })
    }
    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.forward_primitive(Op::Reshape {
            input,
            shape: shape.to_vec(),
        })
    }
    pub fn tile_rows(&mut self, input: NodeId, rows: usize) -> Result<NodeId> {
        self.forward_primitive(Op::TileRows { input, rows })
    }

    /// Mean Gaussian negative log-likelihood of `y` under `N(mu, sigma²)`.
    pub fn gaussian_nll(&mut self, y: NodeId, mu: NodeId, sigma: NodeId) -> Result<NodeId> {
        self.forward_primitive(Op::GaussianNll { y, mu, sigma })
    }

    /// Mean of `-log softmax(logits)[label]` over rows.
    pub fn categorical_ce(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.forward_primitive(Op::CategoricalCe {
            logits,
            labels: labels.to_vec(),
        })
    }

    pub fn kl_diag_gaussian(&mut self, mu_q: NodeId, sigma_q: NodeId, mu_p: NodeId, sigma_p: NodeId) -> Result<NodeId> {
        self.forward_primitive(Op::KlDiagGaussian {
            mu_q,
            sigma_q,
            mu_p,
            sigma_p,
        })
    }

    fn evaluate(&self, op: &Op) -> Result<Tensor> {
        let v = |id: &NodeId| &self.nodes[id.0].value;
        let unary = |id: &NodeId, f: fn(f64) -> f64| v(id).map(f);
        Ok(match op {
            Op::Leaf => return Err(Error::invalid("leaves are added with param/constant")),
            Op::MatMul(a, b) => {
                // A rank-1 lhs is treated as a single row and yields a rank-1 result.
                let (a, b) = (v(a), v(b));
                let inner_ok = a.rank() >= 1 && b.rank() == 2 && a.cols() == b.shape()[0];
                if a.rank() > 2 || !inner_ok {
                    return Err(Error::Shape {
                        op: "matmul",
                        lhs: a.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    });
                }
                let (m, k, n) = (a.rows(), a.cols(), b.shape()[1]);
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
                let shape = if a.rank() == 1 { vec![n] } else { vec![m, n] };
                Tensor::new(shape, out)?
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let name = op.name();
                let (a, b) = (v(a), v(b));
                let (shape, rule) = broadcast_rule(name, a.shape(), b.shape())?;
                match op {
                    Op::Add(..) => binary_map(a, b, shape, rule, |x, y| x + y),
                    Op::Sub(..) => binary_map(a, b, shape, rule, |x, y| x - y),
                    _ => binary_map(a, b, shape, rule, |x, y| x * y),
                }
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                v(a).map(|x| x * f)
            }
            Op::Neg(a) => unary(a, |x| -x),
            Op::Tanh(a) => unary(a, f64::tanh),
            Op::Relu(a) => unary(a, |x| x.max(0.0)),
            Op::Softplus(a) => unary(a, softplus),
            Op::Exp(a) => unary(a, f64::exp),
            Op::Log(a) => {
                if v(a).data().iter().any(|&x| x <= 0.0) {
                    return Err(Error::NonFinite { op: "log" });
                }
                unary(a, f64::ln)
            }
            Op::Concat(parts) => {
                let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
                let lead = v(first).shape().split_last().map(|(_, l)| l.to_vec());
                let lead = lead.ok_or_else(|| Error::invalid("concat of scalars"))?;
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let s = v(p).shape();
                    if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                        return Err(Error::Shape {
                            op: "concat",
                            lhs: v(first).shape().to_vec(),
                            rhs: s.to_vec(),
                        });
                    }
                    widths.push(s[lead.len()]);
                }
                let rows: usize = lead.iter().product();
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for (p, &w) in parts.iter().zip(&widths) {
                        data.extend_from_slice(&v(p).data()[r * w..(r + 1) * w]);
                    }
                }
                let mut shape = lead;
                shape.push(total);
                Tensor::new(shape, data)?
            }
            Op::Mean { input, axis } => {
                let x = v(input);
                if *axis >= x.rank() || x.shape()[*axis] == 0 {
                    return Err(Error::Shape {
                        op: "mean",
                        lhs: x.shape().to_vec(),
                        rhs: vec![*axis],
                    });
                }
                let (outer, len, inner) = axis_split(x.shape(), *axis);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for a in 0..len {
                        let src = &x.data()[(o * len + a) * inner..(o * len + a + 1) * inner];
                        for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *dst += s;
                        }
                    }
                }
                let scale = 1.0 / len as f64;
                out.iter_mut().for_each(|o| *o *= scale);
                let mut shape = x.shape().to_vec();
                shape.remove(*axis);
                Tensor::new(shape, out)?
            }
            Op::Sum(a) => Tensor::scalar(v(a).sum()),
            Op::Slice { input, start, end } => {
                let x = v(input);
                let c = x.cols();
                if x.rank() == 0 || start >= end || *end > c {
                    return Err(Error::Shape {
                        op: "slice",
                        lhs: x.shape().to_vec(),
                        rhs: vec![*start, *end],
                    });
                }
                let mut data = Vec::with_capacity(x.rows() * (end - start));
                for row in x.data().chunks(c) {
                    data.extend_from_slice(&row[*start..*end]);
                }
                let mut shape = x.shape().to_vec();
                *shape.last_mut().unwrap() = end - start;
                Tensor::new(shape, data)?
            }
            Op::Reshape { input, shape } => v(input).clone().reshape(shape.clone())?,
            Op::TileRows { input, rows } => {
                let x = v(input);
                let ok = x.rank() == 1 || (x.rank() == 2 && x.shape()[0] == 1);
                if !ok {
                    return Err(Error::Shape {
                        op: "tile_rows",
                        lhs: x.shape().to_vec(),
                        rhs: vec![*rows],
                    });
                }
                let d = x.cols();
                let mut data = Vec::with_capacity(rows * d);
                for _ in 0..*rows {
                    data.extend_from_slice(x.data());
                }
                Tensor::new(vec![*rows, d], data)?
            }
            Op::GaussianNll { y, mu, sigma } => {
                let (y, mu, sigma) = (v(y), v(mu), v(sigma));
                same_shape("gaussian_nll", y, mu)?;
                same_shape("gaussian_nll", y, sigma)?;
                if sigma.data().iter().any(|&s| s <= 0.0) {
                    return Err(Error::invalid("gaussian_nll requires sigma > 0"));
                }
                let count = y.len().max(1) as f64;
                let total: f64 = y
                    .data()
                    .iter()
                    .zip(mu.data())
                    .zip(sigma.data())
                    .map(|((&y, &m), &s)| HALF_LN_2PI + s.ln() + (y - m).powi(2) / (2.0 * s * s))
                    .sum();
                Tensor::scalar(total / count)
            }
            Op::CategoricalCe { logits, labels } => {
                let x = v(logits);
                let c = x.cols();
                if x.rank() == 0 || x.rank() > 2 || x.rows() != labels.len() {
                    return Err(Error::Shape {
                        op: "categorical_ce",
                        lhs: x.shape().to_vec(),
                        rhs: vec![labels.len()],
                    });
                }
                if let Some(bad) = labels.iter().find(|&&l| l >= c) {
                    return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
                }
                let mut total = 0.0;
                for (row, &label) in x.data().chunks(c).zip(labels) {
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
                    total += lse - row[label];
                }
                Tensor::scalar(total / labels.len().max(1) as f64)
            }
            Op::KlDiagGaussian {
                mu_q,
                sigma_q,
                mu_p,
                sigma_p,
            } => {
                let (mq, sq, mp, sp) = (v(mu_q), v(sigma_q), v(mu_p), v(sigma_p));
                for other in [sq, mp, sp] {
                    same_shape("kl_diag_gaussian", mq, other)?;
                }
                if sq.data().iter().chain(sp.data()).any(|&s| s <= 0.0) {
                    return Err(Error::invalid("kl_diag_gaussian requires sigma > 0"));
                }
                let mut total = 0.0;
                for i in 0..mq.len() {
                    let (a, s1, b, s2) = (mq.data()[i], sq.data()[i], mp.data()[i], sp.data()[i]);
                    total += (s2 / s1).ln() + (s1 * s1 + (a - b).powi(2)) / (2.0 * s2 * s2) - 0.5;
                }
                Tensor::scalar(total)
            }
        })
    }

    /// Reverse sweep from a scalar `root`.
    ///
    /// Every trainable leaf gets a gradient slot, zero-filled when the leaf is
    /// not reachable from `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut slots: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        slots[root.0] = Some(Tensor::scalar(1.0));
        for k in (0..=root.0).rev() {
            let node = &self.nodes[k];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad) = slots[k].take() else {
                continue;
            };
            self.propagate(k, &grad, &mut slots);
            slots[k] = Some(grad);
        }
        for (slot, node) in slots.iter_mut().zip(&self.nodes) {
            if matches!(node.op, Op::Leaf) && node.requires_grad && slot.is_none() {
                *slot = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { slots })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, k: usize, grad: &Tensor, slots: &mut [Option<Tensor>]) {
        let node = &self.nodes[k];
        let out = &node.value;
        let v = |id: &NodeId| &self.nodes[id.0].value;
        let g = grad.data();
        let elementwise = |x: &Tensor, f: &dyn Fn(usize, f64) -> f64| {
            let data = g.iter().enumerate().map(|(i, &gi)| f(i, gi)).collect();
            Tensor::new(x.shape().to_vec(), data).expect("grad shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (v(a), v(b));
                let (m, kk, n) = (av.rows(), av.cols(), bv.shape()[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * kk];
                    gemm(m, n, kk, g, false, bv.data(), true, 0.0, &mut da);
                    accumulate(slots, *a, Tensor::new(av.shape().to_vec(), da).unwrap());
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; kk * n];
                    gemm(kk, m, n, av.data(), true, g, false, 0.0, &mut db);
                    accumulate(slots, *b, Tensor::new(vec![kk, n], db).unwrap());
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                for (id, s) in [(a, 1.0), (b, sign)] {
                    if !self.needs(*id) {
                        continue;
                    }
                    let shape = v(id).shape();
                    let mut t = if shape == out.shape() {
                        grad.clone()
                    } else {
                        reduce_broadcast(g, v(id).len(), shape)
                    };
                    if s < 0.0 {
                        t.data_mut().iter_mut().for_each(|x| *x = -*x);
                    }
                    accumulate(slots, *id, t);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (v(a), v(b));
                for (id, other) in [(a, bv), (b, av)] {
                    if !self.needs(*id) {
                        continue;
                    }
                    let od = other.data();
                    let on = od.len();
                    let full: Vec<f64> = g.iter().enumerate().map(|(i, &gi)| gi * od[i % on]).collect();
                    let shape = v(id).shape();
                    let t = if shape == out.shape() {
                        Tensor::new(shape.to_vec(), full).unwrap()
                    } else {
                        reduce_broadcast(&full, v(id).len(), shape)
                    };
                    accumulate(slots, *id, t);
                }
            }
            Op::Scale(a, factor) => {
                if self.needs(*a) {
                    accumulate(slots, *a, grad.map(|x| x * factor));
                }
            }
            Op::Neg(a) => {
                if self.needs(*a) {
                    accumulate(slots, *a, grad.map(|x| -x));
                }
            }
            Op::Tanh(a) => {
                if self.needs(*a) {
                    let y = out.data();
                    accumulate(slots, *a, elementwise(out, &|i, gi| gi * (1.0 - y[i] * y[i])));
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    let x = v(a).data();
                    let t = elementwise(out, &|i, gi| if x[i] > 0.0 { gi } else { 0.0 });
                    accumulate(slots, *a, t);
                }
            }
            Op::Softplus(a) => {
                if self.needs(*a) {
                    let x = v(a).data();
                    accumulate(slots, *a, elementwise(out, &|i, gi| gi * sigmoid(x[i])));
                }
            }
            Op::Exp(a) => {
                if self.needs(*a) {
                    let y = out.data();
                    accumulate(slots, *a, elementwise(out, &|i, gi| gi * y[i]));
                }
            }
            Op::Log(a) => {
                if self.needs(*a) {
                    let x = v(a).data();
                    accumulate(slots, *a, elementwise(out, &|i, gi| gi / x[i]));
                }
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let rows = out.rows();
                let mut offset = 0;
                for p in parts {
                    let w = v(p).cols();
                    if self.needs(*p) {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(slots, *p, Tensor::new(v(p).shape().to_vec(), data).unwrap());
                    }
                    offset += w;
                }
            }
            Op::Mean { input, axis } => {
                if self.needs(*input) {
                    let x = v(input);
                    let (outer, len, inner) = axis_split(x.shape(), *axis);
                    let scale = 1.0 / len as f64;
                    let mut data = vec![0.0; x.len()];
                    for o in 0..outer {
                        for a in 0..len {
                            let dst = &mut data[(o * len + a) * inner..(o * len + a + 1) * inner];
                            for (d, s) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                *d = s * scale;
                            }
                        }
                    }
                    accumulate(slots, *input, Tensor::new(x.shape().to_vec(), data).unwrap());
                }
            }
            Op::Sum(a) => {
                if self.needs(*a) {
                    accumulate(slots, *a, Tensor::full(v(a).shape(), g[0]));
                }
            }
            Op::Slice { input, start, end } => {
                if self.needs(*input) {
                    let x = v(input);
                    let c = x.cols();
                    let w = end - start;
                    let mut data = vec![0.0; x.len()];
                    for (r, row) in data.chunks_mut(c).enumerate() {
                        row[*start..*end].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    accumulate(slots, *input, Tensor::new(x.shape().to_vec(), data).unwrap());
                }
            }
            Op::Reshape { input, .. } => {
                if self.needs(*input) {
                    let t = grad.clone().reshape(v(input).shape().to_vec()).unwrap();
                    accumulate(slots, *input, t);
                }
            }
            Op::TileRows { input, .. } => {
                if self.needs(*input) {
                    let x = v(input);
                    accumulate(slots, *input, reduce_broadcast(g, x.len(), x.shape()));
                }
            }
            Op::GaussianNll { y, mu, sigma } => {
                let (yv, mv, sv) = (v(y), v(mu), v(sigma));
                let scale = g[0] / yv.len().max(1) as f64;
                let (yd, md, sd) = (yv.data(), mv.data(), sv.data());
                let resid = |i: usize| yd[i] - md[i];
                let n = yd.len();
                let make =
                    |f: &dyn Fn(usize) -> f64| Tensor::new(yv.shape().to_vec(), (0..n).map(f).collect()).unwrap();
                if self.needs(*y) {
                    accumulate(slots, *y, make(&|i| scale * resid(i) / (sd[i] * sd[i])));
                }
                if self.needs(*mu) {
                    accumulate(slots, *mu, make(&|i| -scale * resid(i) / (sd[i] * sd[i])));
                }
                if self.needs(*sigma) {
                    let t = make(&|i| scale * (1.0 / sd[i] - resid(i).powi(2) / sd[i].powi(3)));
                    accumulate(slots, *sigma, t);
                }
            }
            Op::CategoricalCe { logits, labels } => {
                if self.needs(*logits) {
                    let x = v(logits);
                    let c = x.cols();
                    let scale = g[0] / labels.len().max(1) as f64;
                    let mut data = Vec::with_capacity(x.len());
                    for (row, &label) in x.data().chunks(c).zip(labels) {
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let total: f64 = row.iter().map(|&z| (z - max).exp()).sum();
                        for (j, &z) in row.iter().enumerate() {
                            let p = (z - max).exp() / total;
                            let target = if j == label { 1.0 } else { 0.0 };
                            data.push(scale * (p - target));
                        }
                    }
                    accumulate(slots, *logits, Tensor::new(x.shape().to_vec(), data).unwrap());
                }
            }
            Op::KlDiagGaussian {
                mu_q,
                sigma_q,
                mu_p,
                sigma_p,
            } => {
                let (mq, sq, mp, sp) = (v(mu_q), v(sigma_q), v(mu_p), v(sigma_p));
                let (mq, sq, mp, sp) = (mq.data(), sq.data(), mp.data(), sp.data());
                let gs = g[0];
                let shape = v(mu_q).shape().to_vec();
                let make = |f: &dyn Fn(usize) -> f64| {
                    Tensor::new(shape.clone(), (0..mq.len()).map(|i| gs * f(i)).collect()).unwrap()
                };
                if self.needs(*mu_q) {
                    accumulate(slots, *mu_q, make(&|i| (mq[i] - mp[i]) / (sp[i] * sp[i])));
                }
                if self.needs(*mu_p) {
                    accumulate(slots, *mu_p, make(&|i| (mp[i] - mq[i]) / (sp[i] * sp[i])));
                }
                if self.needs(*sigma_q) {
                    accumulate(slots, *sigma_q, make(&|i| -1.0 / sq[i] + sq[i] / (sp[i] * sp[i])));
                }
                if self.needs(*sigma_p) {
                    let t = make(&|i| 1.0 / sp[i] - (sq[i] * sq[i] + (mq[i] - mp[i]).powi(2)) / sp[i].powi(3));
                    accumulate(slots, *sigma_p, t);
                }
            }
        }
    }
}

/// Closed-form `KL(N(mu_q, sigma_q²) ‖ N(mu_p, sigma_p²))` summed over dimensions.
pub fn kl_diag_gaussian(mu_q: &[f64], sigma_q: &[f64], mu_p: &[f64], sigma_p: &[f64]) -> f64 {
    mu_q.iter()
        .zip(sigma_q)
        .zip(mu_p.iter().zip(sigma_p))
        .map(|((&a, &s1), (&b, &s2))| (s2 / s1).ln() + (s1 * s1 + (a - b).powi(2)) / (2.0 * s2 * s2) - 0.5)
        .sum()
}

/// `½ ln(2π)`, the constant term of the Gaussian negative log-density.
pub const fn half_ln_two_pi() -> f64 {
    HALF_LN_2PI
}
