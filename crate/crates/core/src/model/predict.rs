use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{Aggregator, Variant};
use super::network::{self, HeadNodes};
use super::params::{Bound, CnpParams};
use crate::autodiff::{softmax, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Observed `(x, y)` pairs stored as two row-aligned matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSet {
    x: Tensor,
    y: Tensor,
}

impl ContextSet {
    pub fn new(x: Tensor, y: Tensor) -> Result<Self> {
        if x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows() {
            return Err(Error::Shape {
                op: "context",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn empty(x_dim: usize, y_dim: usize) -> Self {
        Self {
            x: Tensor::zeros(&[0, x_dim]),
            y: Tensor::zeros(&[0, y_dim]),
        }
    }

    pub fn from_pairs(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let xs: Vec<&[f64]> = pairs.iter().map(|(x, _)| x.as_slice()).collect();
        let ys: Vec<&[f64]> = pairs.iter().map(|(_, y)| y.as_slice()).collect();
        Self::new(Tensor::from_rows(&xs)?, Tensor::from_rows(&ys)?)
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn y(&self) -> &Tensor {
        &self.y
    }

    /// Pairs reordered so that pair `i` of the result is pair `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(order),
            y: self.y.select_rows(order),
        }
    }

    /// Union of two sets with matching dimensions (used for the latent posterior).
    pub fn union(&self, other: &ContextSet) -> Result<Self> {
        if self.x.cols() != other.x.cols() || self.y.cols() != other.y.cols() {
            return Err(Error::Shape {
                op: "context union",
                lhs: self.x.shape().to_vec(),
                rhs: other.x.shape().to_vec(),
            });
        }
        let stack = |a: &Tensor, b: &Tensor| {
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::matrix(a.rows() + b.rows(), a.cols(), data)
        };
        Ok(Self {
            x: stack(&self.x, &other.x)?,
            y: stack(&self.y, &other.y)?,
        })
    }
}

/// Query inputs, one row per target.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSet {
    x: Tensor,
}

impl TargetSet {
    pub fn new(x: Tensor) -> Result<Self> {
        if x.rank() != 2 || x.rows() == 0 {
            return Err(Error::invalid(format!(
                "target set must be a non-empty matrix, got shape {:?}",
                x.shape()
            )));
        }
        Ok(Self { x })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }
}

/// Prediction parameters for one target.
#[derive(Clone, Debug, PartialEq)]
pub enum HeadOutput {
    Gaussian { mu: Vec<f64>, sigma: Vec<f64> },
    Categorical { logits: Vec<f64> },
}

/// Gaussian predictions for a batch of targets, `[m, y_dim]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrediction {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl GaussianPrediction {
    pub fn to_heads(&self) -> Vec<HeadOutput> {
        (0..self.mu.rows())
            .map(|i| HeadOutput::Gaussian {
                mu: self.mu.row(i).to_vec(),
                sigma: self.sigma.row(i).to_vec(),
            })
            .collect()
    }
}

/// Diagonal Gaussian over the latent variable.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Running sum of embeddings supporting O(1) streaming updates.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateState {
    sum: Vec<f64>,
    count: usize,
}

impl AggregateState {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn update(&mut self, embedding: &[f64]) -> Result<()> {
        if embedding.len() != self.sum.len() {
            return Err(Error::Shape {
                op: "aggregate update",
                lhs: vec![self.sum.len()],
                rhs: vec![embedding.len()],
            });
        }
        for (s, e) in self.sum.iter_mut().zip(embedding) {
            *s += e;
        }
        self.count += 1;
        Ok(())
    }

    /// State of the concatenation of the two underlying sets.
    pub fn merge(&self, other: &AggregateState) -> Result<Self> {
        if self.sum.len() != other.sum.len() {
            return Err(Error::Shape {
                op: "aggregate merge",
                lhs: vec![self.sum.len()],
                rhs: vec![other.sum.len()],
            });
        }
        Ok(Self {
            sum: self.sum.iter().zip(&other.sum).map(|(a, b)| a + b).collect(),
            count: self.count + other.count,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    /// `None` until at least one embedding has been seen.
    pub fn mean(&self) -> Option<Vec<f64>> {
        (self.count > 0).then(|| self.sum.iter().map(|s| s / self.count as f64).collect())
    }
}

/// Arithmetic mean of a non-empty list of embeddings.
pub fn aggregate(embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate an empty embedding list"))?;
    let mut state = AggregateState::new(first.len());
    for e in embeddings {
        state.update(e)?;
    }
    Ok(state.mean().expect("non-empty"))
}

/// Embedding `h(x, y)` of a single pair.
pub fn encode_one(params: &CnpParams, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let xt = Tensor::matrix(1, x.len(), x.to_vec())?;
    let yt = Tensor::matrix(1, y.len(), y.to_vec())?;
    let r = network::encode_rows(&mut g, &bound, params, &xt, &yt)?;
    Ok(g.value(r).data().to_vec())
}

/// Decodes one target from an explicit representation (and latent sample).
pub fn decode(params: &CnpParams, repr: &[f64], x_target: &[f64], z: Option<&[f64]>) -> Result<HeadOutput> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let r = g.constant(Tensor::vector(repr.to_vec()));
    let z = z.map(|z| g.constant(Tensor::vector(z.to_vec())));
    let xt = Tensor::matrix(1, x_target.len(), x_target.to_vec())?;
    Ok(match network::decode_rows(&mut g, &bound, params, r, &xt, z)? {
        HeadNodes::Gaussian { mu, sigma } => HeadOutput::Gaussian {
            mu: g.value(mu).data().to_vec(),
            sigma: g.value(sigma).data().to_vec(),
        },
        HeadNodes::Logits(l) => HeadOutput::Categorical {
            logits: g.value(l).data().to_vec(),
        },
    })
}

/// Context rows encoded per block at inference time.
const ENCODE_BLOCK: usize = 256;

/// Inference-time representation. Large contexts are encoded block by block
/// into a running sum, so the working set stays bounded as `n` grows.
fn inference_repr(g: &mut Graph, bound: &Bound, params: &CnpParams, context: &ContextSet) -> Result<NodeId> {
    let n = context.len();
    if n <= ENCODE_BLOCK {
        return network::representation(g, bound, params, context.x(), context.y());
    }
    let mut state = AggregateState::new(params.config().repr_dim);
    for start in (0..n).step_by(ENCODE_BLOCK) {
        let rows: Vec<usize> = (start..(start + ENCODE_BLOCK).min(n)).collect();
        let mut block = Graph::new();
        let block_bound = params.bind(&mut block, false);
        let x = context.x().select_rows(&rows);
        let y = context.y().select_rows(&rows);
        let e = network::encode_rows(&mut block, &block_bound, params, &x, &y)?;
        let e = block.value(e);
        for r in 0..e.rows() {
            state.update(e.row(r))?;
        }
    }
    let r = match params.config().aggregator {
        Aggregator::Mean => state.mean().expect("non-empty context"),
        Aggregator::Sum => state.sum().to_vec(),
    };
    Ok(g.constant(Tensor::vector(r)))
}

/// Aggregated representation of a context set.
pub fn represent(params: &CnpParams, context: &ContextSet) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let r = inference_repr(&mut g, &bound, params, context)?;
    Ok(g.value(r).data().to_vec())
}

/// Batched Gaussian prediction: `n` encoder passes, one aggregation, `m`
/// decoder passes. Latent models decode at the prior mean of `z`.
pub fn predict_gaussian(params: &CnpParams, context: &ContextSet, targets: &TargetSet) -> Result<GaussianPrediction> {
    if params.config().classes().is_some() {
        return Err(Error::invalid("classifier models predict through classify"));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let r = inference_repr(&mut g, &bound, params, context)?;
    let z = match params.config().variant {
        Variant::Latent { .. } => Some(network::latent_stats(&mut g, &bound, params, context.x(), context.y())?.0),
        _ => None,
    };
    match network::decode_rows(&mut g, &bound, params, r, targets.x(), z)? {
        HeadNodes::Gaussian { mu, sigma } => Ok(GaussianPrediction {
            mu: g.value(mu).clone(),
            sigma: g.value(sigma).clone(),
        }),
        HeadNodes::Logits(_) => unreachable!("gaussian variants only"),
    }
}

/// Per-target predictive distributions given a context set.
pub fn predict(params: &CnpParams, context: &ContextSet, targets: &TargetSet) -> Result<Vec<HeadOutput>> {
    Ok(predict_gaussian(params, context, targets)?.to_heads())
}

fn latent_from(params: &CnpParams, set: &ContextSet) -> Result<LatentGaussian> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let (mu, sigma) = network::latent_stats(&mut g, &bound, params, set.x(), set.y())?;
    Ok(LatentGaussian {
        mu: g.value(mu).data().to_vec(),
        sigma: g.value(sigma).data().to_vec(),
    })
}

/// Conditional prior `p(z | O)`.
pub fn latent_prior(params: &CnpParams, context: &ContextSet) -> Result<LatentGaussian> {
    latent_from(params, context)
}

/// Posterior `q(z | O, T)` conditioned on the context and the labelled targets.
pub fn latent_posterior(
    params: &CnpParams,
    context: &ContextSet,
    labelled_targets: &ContextSet,
) -> Result<LatentGaussian> {
    let union = context.union(labelled_targets)?;
    if union.is_empty() {
        return Err(Error::invalid("latent posterior needs at least one observed pair"));
    }
    latent_from(params, &union)
}

/// `k` coherent joint samples: one `z` per draw, shared across all targets.
pub fn sample_coherent(
    params: &CnpParams,
    context: &ContextSet,
    targets: &TargetSet,
    draws: usize,
    seed: u64,
) -> Result<Vec<GaussianPrediction>> {
    let prior = latent_prior(params, context)?;
    sample_coherent_from(params, context, targets, &prior, draws, seed)
}

/// As [`sample_coherent`] but with an explicit latent distribution.
pub fn sample_coherent_from(
    params: &CnpParams,
    context: &ContextSet,
    targets: &TargetSet,
    latent: &LatentGaussian,
    draws: usize,
    seed: u64,
) -> Result<Vec<GaussianPrediction>> {
    if draws < 1 {
        return Err(Error::invalid("sample_coherent needs at least one draw"));
    }
    let z_dim = params
        .config()
        .z_dim()
        .ok_or_else(|| Error::invalid("model has no latent networks"))?;
    if latent.mu.len() != z_dim || latent.sigma.len() != z_dim {
        return Err(Error::Shape {
            op: "sample_coherent",
            lhs: vec![z_dim],
            rhs: vec![latent.mu.len(), latent.sigma.len()],
        });
    }
    let repr = represent(params, context)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(draws);
    for _ in 0..draws {
        let z: Vec<f64> = latent
            .mu
            .iter()
            .zip(&latent.sigma)
            .map(|(m, s)| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                m + s * eps
            })
            .collect();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let r = g.constant(Tensor::vector(repr.clone()));
        let zn = g.constant(Tensor::vector(z));
        match network::decode_rows(&mut g, &bound, params, r, targets.x(), Some(zn))? {
            HeadNodes::Gaussian { mu, sigma } => samples.push(GaussianPrediction {
                mu: g.value(mu).clone(),
                sigma: g.value(sigma).clone(),
            }),
            HeadNodes::Logits(_) => unreachable!("latent models have Gaussian heads"),
        }
    }
    Ok(samples)
}

/// Labelled support examples for few-shot classification.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledSet {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

/// Class logits `[m, C]` for each query.
pub fn classify_logits(params: &CnpParams, support: &LabelledSet, queries: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let rep = network::class_representation(&mut g, &bound, params, &support.x, &support.labels)?;
    match network::decode_rows(&mut g, &bound, params, rep, queries, None)? {
        HeadNodes::Logits(l) => Ok(g.value(l).clone()),
        HeadNodes::Gaussian { .. } => unreachable!("classifier head"),
    }
}

/// Class probabilities `[m, C]` for each query.
pub fn classify(params: &CnpParams, support: &LabelledSet, queries: &Tensor) -> Result<Tensor> {
    Ok(softmax(&classify_logits(params, support, queries)?))
}
