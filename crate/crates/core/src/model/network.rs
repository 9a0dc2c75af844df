//! Graph-level forward passes shared by prediction and the training losses.

use std::cell::Cell;

use super::config::{Activation, Aggregator, Variant};
use super::params::{Bound, CnpParams, MlpLayout};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static ENCODER_PASSES: Cell<u64> = const { Cell::new(0) };
    static DECODER_PASSES: Cell<u64> = const { Cell::new(0) };
}

/// Per-thread count of per-point network evaluations.
///
/// Networks run on whole row batches; every row counts as one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub encoder: u64,
    pub decoder: u64,
}

impl CallCounts {
    pub fn current() -> Self {
        Self {
            encoder: ENCODER_PASSES.with(Cell::get),
            decoder: DECODER_PASSES.with(Cell::get),
        }
    }

    pub fn since(self, earlier: CallCounts) -> CallCounts {
        CallCounts {
            encoder: self.encoder - earlier.encoder,
            decoder: self.decoder - earlier.decoder,
        }
    }
}

fn count(counter: &'static std::thread::LocalKey<Cell<u64>>, rows: usize) {
    counter.with(|c| c.set(c.get() + rows as u64));
}

pub(crate) enum MlpInput {
    /// One input row per output row.
    Rows(NodeId),
    /// A vector shared by every output row.
    Shared(NodeId),
}

fn activate(g: &mut Graph, x: NodeId, activation: Activation) -> Result<NodeId> {
    match activation {
        Activation::Relu => g.relu(x),
        Activation::Tanh => g.tanh(x),
    }
}

pub(crate) fn mlp_forward(
    g: &mut Graph,
    bound: &Bound,
    layout: &MlpLayout,
    inputs: &[MlpInput],
    activation: Activation,
) -> Result<NodeId> {
    let mut rows_acc = None;
    let mut shared_acc = bound.node(layout.first_bias);
    for (input, &w) in inputs.iter().zip(&layout.first_weights) {
        let w = bound.node(w);
        match *input {
            MlpInput::Rows(x) => {
                let t = g.matmul(x, w)?;
                rows_acc = Some(match rows_acc {
                    None => t,
                    Some(acc) => g.add(acc, t)?,
                });
            }
            MlpInput::Shared(v) => {
                let t = g.matmul(v, w)?;
                shared_acc = g.add(shared_acc, t)?;
            }
        }
    }
    let rows_acc = rows_acc.ok_or_else(|| Error::invalid("mlp needs at least one row input"))?;
    let mut h = g.add(rows_acc, shared_acc)?;
    for &(w, b) in &layout.rest {
        h = activate(g, h, activation)?;
        let (w, b) = (bound.node(w), bound.node(b));
        h = g.matmul(h, w)?;
        h = g.add(h, b)?;
    }
    Ok(h)
}

fn check_cols(what: &str, t: &Tensor, expected: usize) -> Result<()> {
    if t.rank() != 2 || t.cols() != expected {
        return Err(Error::invalid(format!(
            "{what} has shape {:?}, expected {expected} columns",
            t.shape()
        )));
    }
    Ok(())
}

/// Per-point embeddings `r_i = h(x_i, y_i)` as an `[n, d]` node.
pub(crate) fn encode_rows(g: &mut Graph, bound: &Bound, params: &CnpParams, x: &Tensor, y: &Tensor) -> Result<NodeId> {
    let config = params.config();
    check_cols("context inputs", x, config.x_dim)?;
    check_cols("context outputs", y, config.y_dim)?;
    if x.rows() != y.rows() {
        return Err(Error::Shape {
            op: "encode",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let xn = g.constant(x.clone());
    let yn = g.constant(y.clone());
    let xy = g.concat(&[xn, yn])?;
    count(&ENCODER_PASSES, x.rows());
    mlp_forward(
        g,
        bound,
        &params.layout().encoder,
        &[MlpInput::Rows(xy)],
        config.activation,
    )
}

pub(crate) fn reduce(g: &mut Graph, embeddings: NodeId, aggregator: Aggregator) -> Result<NodeId> {
    let mean = g.mean(embeddings, 0)?;
    match aggregator {
        Aggregator::Mean => Ok(mean),
        Aggregator::Sum => {
            let n = g.shape(embeddings)[0] as f64;
            g.scale(mean, n)
        }
    }
}

/// Aggregated representation `r` of a context set; the learned empty-context
/// vector when there are no pairs.
pub(crate) fn representation(
    g: &mut Graph,
    bound: &Bound,
    params: &CnpParams,
    x: &Tensor,
    y: &Tensor,
) -> Result<NodeId> {
    if x.rows() == 0 {
        check_cols("context inputs", x, params.config().x_dim)?;
        return Ok(bound.node(params.layout().empty_repr));
    }
    let r = encode_rows(g, bound, params, x, y)?;
    reduce(g, r, params.config().aggregator)
}

/// Decoder head nodes.
pub(crate) enum HeadNodes {
    Gaussian { mu: NodeId, sigma: NodeId },
    Logits(NodeId),
}

/// Runs `g(x_t, r[, z])` for every target row.
pub(crate) fn decode_rows(
    g: &mut Graph,
    bound: &Bound,
    params: &CnpParams,
    repr: NodeId,
    targets: &Tensor,
    z: Option<NodeId>,
) -> Result<HeadNodes> {
    let config = params.config();
    check_cols("target inputs", targets, config.x_dim)?;
    if targets.rows() == 0 {
        return Err(Error::invalid("target set is empty"));
    }
    if g.shape(repr) != [config.decoder_repr_width()] {
        return Err(Error::Shape {
            op: "decode",
            lhs: g.shape(repr).to_vec(),
            rhs: vec![config.decoder_repr_width()],
        });
    }
    let xt = g.constant(targets.clone());
    let mut inputs = vec![MlpInput::Rows(xt), MlpInput::Shared(repr)];
    match (config.variant, z) {
        (Variant::Latent { .. }, Some(z)) => inputs.push(MlpInput::Shared(z)),
        (Variant::Latent { .. }, None) => return Err(Error::invalid("latent decoder needs z")),
        (_, Some(_)) => return Err(Error::invalid("model has no latent variable")),
        _ => {}
    }
    count(&DECODER_PASSES, targets.rows());
    let out = mlp_forward(g, bound, &params.layout().decoder, &inputs, config.activation)?;
    match config.variant {
        Variant::Classifier { .. } => Ok(HeadNodes::Logits(out)),
        _ => {
            let dy = config.y_dim;
            let mu = g.slice(out, 0, dy)?;
            let raw = g.slice(out, dy, 2 * dy)?;
            let sigma = floored_softplus(g, raw, config.sigma_floor)?;
            Ok(HeadNodes::Gaussian { mu, sigma })
        }
    }
}

pub(crate) fn floored_softplus(g: &mut Graph, raw: NodeId, floor: f64) -> Result<NodeId> {
    let sp = g.softplus(raw)?;
    let floor = g.constant(Tensor::scalar(floor));
    g.add(sp, floor)
}

/// Mean and scale of the latent Gaussian given a conditioning set.
pub(crate) fn latent_stats(
    g: &mut Graph,
    bound: &Bound,
    params: &CnpParams,
    x: &Tensor,
    y: &Tensor,
) -> Result<(NodeId, NodeId)> {
    let config = params.config();
    let (latent, z_dim) = match (&params.layout().latent, config.z_dim()) {
        (Some(l), Some(z)) => (l, z),
        _ => return Err(Error::invalid("model has no latent networks")),
    };
    check_cols("latent inputs", x, config.x_dim)?;
    check_cols("latent outputs", y, config.y_dim)?;
    let stats = if x.rows() == 0 {
        bound.node(latent.empty_stats)
    } else {
        let xn = g.constant(x.clone());
        let yn = g.constant(y.clone());
        let xy = g.concat(&[xn, yn])?;
        let per_point = mlp_forward(g, bound, &latent.network, &[MlpInput::Rows(xy)], config.activation)?;
        g.mean(per_point, 0)?
    };
    let mu = g.slice(stats, 0, z_dim)?;
    let raw = g.slice(stats, z_dim, 2 * z_dim)?;
    let sigma = floored_softplus(g, raw, config.sigma_floor)?;
    Ok((mu, sigma))
}

/// One-hot rows for class labels.
pub(crate) fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (row, &l) in labels.iter().enumerate() {
        data[row * classes + l] = 1.0;
    }
    Tensor::matrix(labels.len(), classes, data).expect("one-hot shape")
}

/// Concatenation of per-class mean embeddings, in class order.
pub(crate) fn class_representation(
    g: &mut Graph,
    bound: &Bound,
    params: &CnpParams,
    support_x: &Tensor,
    labels: &[usize],
) -> Result<NodeId> {
    let classes = params
        .config()
        .classes()
        .ok_or_else(|| Error::invalid("model is not a classifier"))?;
    if support_x.rows() != labels.len() {
        return Err(Error::Shape {
            op: "classify",
            lhs: support_x.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut parts = Vec::with_capacity(classes);
    for class in 0..classes {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if rows.is_empty() {
            return Err(Error::MissingClass(class));
        }
        let x = support_x.select_rows(&rows);
        let y = one_hot(&vec![class; rows.len()], classes);
        let r = encode_rows(g, bound, params, &x, &y)?;
        parts.push(reduce(g, r, params.config().aggregator)?);
    }
    g.concat(&parts)
}
