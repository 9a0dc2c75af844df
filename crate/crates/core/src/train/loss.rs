//! Training objectives as graph nodes.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::model::network::{self, HeadNodes};
use crate::model::{Bound, CnpParams, LabelledSet, Variant};
use crate::tasks::TaskInstance;

fn check_context(task: &TaskInstance) -> Result<()> {
    if task.context_size < 1 || task.context_size > task.len() {
        return Err(Error::invalid(format!(
            "context size {} outside 1..={}",
            task.context_size,
            task.len()
        )));
    }
    Ok(())
}

/// Mean Gaussian NLL of every supervision output given the first
/// `context_size` pairs.
pub fn cnp_loss(g: &mut Graph, bound: &Bound, params: &CnpParams, task: &TaskInstance) -> Result<NodeId> {
    check_context(task)?;
    let k = task.context_size;
    let r = network::representation(g, bound, params, &task.x.head_rows(k), &task.y.head_rows(k))?;
    let z = match params.config().variant {
        Variant::Latent { .. } => {
            Some(network::latent_stats(g, bound, params, &task.x.head_rows(k), &task.y.head_rows(k))?.0)
        }
        _ => None,
    };
    match network::decode_rows(g, bound, params, r, &task.x, z)? {
        HeadNodes::Gaussian { mu, sigma } => {
            let y = g.constant(task.y.clone());
            g.gaussian_nll(y, mu, sigma)
        }
        HeadNodes::Logits(_) => Err(Error::invalid("classifier models train on episodes")),
    }
}

/// Nodes of the per-task variational bound.
#[derive(Clone, Copy, Debug)]
pub struct ElboNodes {
    /// `(Σ NLL + KL) / n`
    pub loss: NodeId,
    /// Mean NLL over targets at the sampled `z`.
    pub nll: NodeId,
    /// `KL(q(z | O, T) ‖ p(z | O))`
    pub kl: NodeId,
}

/// Variational bound with one reparameterized posterior sample `z = μ + σ·ε`.
/// Both terms are divided by the number of targets.
pub fn elbo_loss(
    g: &mut Graph,
    bound: &Bound,
    params: &CnpParams,
    task: &TaskInstance,
    eps: &[f64],
) -> Result<ElboNodes> {
    check_context(task)?;
    let z_dim = params
        .config()
        .z_dim()
        .ok_or_else(|| Error::invalid("ELBO needs a latent model"))?;
    if eps.len() != z_dim {
        return Err(Error::Shape {
            op: "elbo_loss",
            lhs: vec![eps.len()],
            rhs: vec![z_dim],
        });
    }
    let k = task.context_size;
    let (cx, cy) = (task.x.head_rows(k), task.y.head_rows(k));
    let r = network::representation(g, bound, params, &cx, &cy)?;
    let (mu_p, sigma_p) = network::latent_stats(g, bound, params, &cx, &cy)?;
    let (mu_q, sigma_q) = network::latent_stats(g, bound, params, &task.x, &task.y)?;
    let eps = g.constant(Tensor::vector(eps.to_vec()));
    let noise = g.mul(sigma_q, eps)?;
    let z = g.add(mu_q, noise)?;
    let nll = match network::decode_rows(g, bound, params, r, &task.x, Some(z))? {
        HeadNodes::Gaussian { mu, sigma } => {
            let y = g.constant(task.y.clone());
            g.gaussian_nll(y, mu, sigma)?
        }
        HeadNodes::Logits(_) => unreachable!("latent models have Gaussian heads"),
    };
    let kl = g.kl_diag_gaussian(mu_q, sigma_q, mu_p, sigma_p)?;
    let scaled_kl = g.scale(kl, 1.0 / task.y.len() as f64)?;
    let loss = g.add(nll, scaled_kl)?;
    Ok(ElboNodes { loss, nll, kl })
}

/// Mean cross-entropy of the query labels given the support set.
pub fn classifier_loss(
    g: &mut Graph,
    bound: &Bound,
    params: &CnpParams,
    support: &LabelledSet,
    queries: &LabelledSet,
) -> Result<NodeId> {
    let rep = network::class_representation(g, bound, params, &support.x, &support.labels)?;
    match network::decode_rows(g, bound, params, rep, &queries.x, None)? {
        HeadNodes::Logits(l) => g.categorical_ce(l, &queries.labels),
        HeadNodes::Gaussian { .. } => Err(Error::invalid("regression models have no class head")),
    }
}

/// Scalar value of [`cnp_loss`] without keeping the graph.
pub fn cnp_loss_value(params: &CnpParams, task: &TaskInstance) -> Result<f64> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let loss = cnp_loss(&mut g, &bound, params, task)?;
    Ok(g.value(loss).item())
}
