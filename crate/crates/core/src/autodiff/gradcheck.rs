//! Central finite-difference gradient checking.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error over coordinates that were not flagged.
    pub max_relative_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: Option<usize>,
    /// Coordinates whose one-sided differences disagree (e.g. a relu kink).
    pub flagged: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the tape gradient of `build(θ)` against central differences.
///
/// `build` receives a fresh graph and the node holding θ and must return a
/// scalar node. Coordinates where the forward and backward one-sided slopes
/// disagree are treated as non-differentiable points and excluded from the
/// maximum.
pub fn grad_check<F>(build: F, theta: &Tensor, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let id = g.param(t.clone());
        let root = build(&mut g, id)?;
        Ok(g.value(root).item())
    };

    let mut graph = Graph::new();
    let theta_id = graph.param(theta.clone());
    let root = build(&mut graph, theta_id)?;
    let grads = graph.backward(root)?;
    let analytic = grads.get(theta_id).expect("param gradient").data().to_vec();
    let f0 = graph.value(root).item();

    let mut numeric = Vec::with_capacity(theta.len());
    let mut flagged = Vec::new();
    let mut max_relative_error: f64 = 0.0;
    let mut worst_index = None;
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus.data_mut()[i] += step;
        let mut minus = theta.clone();
        minus.data_mut()[i] -= step;
        let (fp, fm) = (eval(&plus)?, eval(&minus)?);
        let central = (fp - fm) / (2.0 * step);
        numeric.push(central);

        let forward = (fp - f0) / step;
        let backward = (f0 - fm) / step;
        if (forward - backward).abs() > 1e-3 * (1.0 + forward.abs() + backward.abs()) {
            flagged.push(i);
            continue;
        }
        let a = analytic[i];
        let rel = (a - central).abs() / (a.abs() + central.abs()).max(1e-8);
        if rel > max_relative_error {
            max_relative_error = rel;
            worst_index = Some(i);
        }
    }
    Ok(GradCheckReport {
        max_relative_error,
        worst_index,
        flagged,
        analytic,
        numeric,
    })
}
