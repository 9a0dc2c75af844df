//! Held-out evaluation of regression models, oracles, and acquisition policies.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baseline::{gp_posterior, gp_posterior_mean, knn_predict};
use crate::error::{Error, Result};
use crate::model::{predict_gaussian, CnpParams, TargetSet};
use crate::tasks::{split_seed, Image, KernelSpec, TaskInstance, TaskSampler};

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Per-point Gaussian negative log-likelihood.
pub fn gaussian_nll_point(y: f64, mu: f64, sigma: f64) -> f64 {
    let z = (y - mu) / sigma;
    HALF_LN_TWO_PI + sigma.ln() + 0.5 * z * z
}

/// Aggregate scores over a set of tasks at one context-size setting.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMetrics {
    /// `None` keeps each task's own sampled context size.
    pub context_size: Option<usize>,
    /// Mean NLL over every supervision point.
    pub nll: f64,
    /// Mean squared error of the predicted mean over every supervision point.
    pub mse: f64,
    pub mean_sigma: f64,
    /// Mean NLL over points outside the context; NaN when there are none.
    pub nll_unobserved: f64,
    pub mse_unobserved: f64,
    /// `(context size, task count)`, ascending.
    pub histogram: Vec<(usize, usize)>,
}

/// Fixed held-out tasks drawn with per-task seed streams.
pub fn heldout_tasks(sampler: &dyn TaskSampler, count: usize, seed: u64) -> Result<Vec<TaskInstance>> {
    (0..count)
        .map(|i| sampler.sample(&mut ChaCha8Rng::seed_from_u64(split_seed(seed, i as u64))))
        .collect()
}

#[derive(Default)]
struct Accumulator {
    nll: f64,
    se: f64,
    sigma: f64,
    points: usize,
    nll_un: f64,
    se_un: f64,
    points_un: usize,
    histogram: BTreeMap<usize, usize>,
}

impl Accumulator {
    fn add(&mut self, task: &TaskInstance, mu: &[f64], sigma: &[f64]) {
        let y = task.y.data();
        let dy = task.y.cols();
        *self.histogram.entry(task.context_size).or_default() += 1;
        for i in 0..y.len() {
            let nll = gaussian_nll_point(y[i], mu[i], sigma[i]);
            let se = (y[i] - mu[i]) * (y[i] - mu[i]);
            self.nll += nll;
            self.se += se;
            self.sigma += sigma[i];
            self.points += 1;
            if i / dy >= task.context_size {
                self.nll_un += nll;
                self.se_un += se;
                self.points_un += 1;
            }
        }
    }

    fn finish(self, context_size: Option<usize>) -> EvalMetrics {
        let p = self.points.max(1) as f64;
        let (nll_un, mse_un) = if self.points_un == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let q = self.points_un as f64;
            (self.nll_un / q, self.se_un / q)
        };
        EvalMetrics {
            context_size,
            nll: self.nll / p,
            mse: self.se / p,
            mean_sigma: self.sigma / p,
            nll_unobserved: nll_un,
            mse_unobserved: mse_un,
            histogram: self.histogram.into_iter().collect(),
        }
    }
}

fn at_size(task: &TaskInstance, size: Option<usize>) -> Result<TaskInstance> {
    match size {
        Some(k) => task.with_context_size(k),
        None => Ok(task.clone()),
    }
}

/// Scores a predictor returning `(μ, σ)` per supervision value.
pub fn evaluate_with<F>(
    tasks: &[TaskInstance],
    context_sizes: &[Option<usize>],
    mut predictor: F,
) -> Result<Vec<EvalMetrics>>
where
    F: FnMut(&TaskInstance) -> Result<(Vec<f64>, Vec<f64>)>,
{
    context_sizes
        .iter()
        .map(|&size| {
            let mut acc = Accumulator::default();
            for task in tasks {
                let task = at_size(task, size)?;
                let (mu, sigma) = predictor(&task)?;
                acc.add(&task, &mu, &sigma);
            }
            Ok(acc.finish(size))
        })
        .collect()
}

/// CNP scores at each requested context size; the params are only read.
pub fn evaluate(
    params: &CnpParams,
    tasks: &[TaskInstance],
    context_sizes: &[Option<usize>],
) -> Result<Vec<EvalMetrics>> {
    evaluate_with(tasks, context_sizes, |task| {
        let pred = predict_gaussian(params, &task.context(), &task.targets())?;
        Ok((pred.mu.into_data(), pred.sigma.into_data()))
    })
}

/// Exact GP predictive for each task's values. The kernel jitter is added to
/// the latent variance because sampled values carry it as noise.
pub fn evaluate_gp(
    kernel: &KernelSpec,
    tasks: &[TaskInstance],
    context_sizes: &[Option<usize>],
) -> Result<Vec<EvalMetrics>> {
    evaluate_with(tasks, context_sizes, |task| {
        let post = gp_posterior(kernel, &task.context(), &task.targets())?;
        let sigma = post.variance.iter().map(|v| (v + kernel.jitter).sqrt()).collect();
        Ok((post.mean, sigma))
    })
}

/// Mean full-image MSE of predicted means.
fn image_mse(image: &Image, mu: &[f64]) -> f64 {
    image.pixels.iter().zip(mu).map(|(y, m)| (y - m) * (y - m)).sum::<f64>() / image.len() as f64
}

/// Full-image MSE of the CNP, GP-mean and kNN predictors for one context.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageScores {
    pub cnp: f64,
    pub gp: f64,
    pub knn: f64,
}

pub fn score_image(
    params: &CnpParams,
    kernel: &KernelSpec,
    knn_k: usize,
    image: &Image,
    context_pixels: &[usize],
) -> Result<ImageScores> {
    let targets = TargetSet::new(image.coordinates())?;
    let context = image.context(context_pixels);
    let cnp = predict_gaussian(params, &context, &targets)?;
    let gp = gp_posterior_mean(kernel, &context, &targets)?;
    let knn = knn_predict(&context, &targets, knn_k)?;
    Ok(ImageScores {
        cnp: image_mse(image, cnp.mu.data()),
        gp: image_mse(image, &gp),
        knn: image_mse(image, &knn),
    })
}

/// Mean MSE after each of the first `budget` observations, per policy.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionCurves {
    /// Entry `j` is the MSE with `j + 1` observed pixels.
    pub active: Vec<f64>,
    pub random: Vec<f64>,
}

/// Grows the context one pixel at a time, by maximum σ (ties to the lowest
/// row-major index) or uniformly at random, recording full-image MSE.
pub fn active_vs_random(params: &CnpParams, images: &[Image], budget: usize, seed: u64) -> Result<AcquisitionCurves> {
    if images.is_empty() {
        return Err(Error::invalid("no images to evaluate"));
    }
    let mut active = vec![0.0; budget];
    let mut random = vec![0.0; budget];
    for (n, image) in images.iter().enumerate() {
        if budget > image.len() {
            return Err(Error::invalid(format!(
                "budget {budget} exceeds {} pixels",
                image.len()
            )));
        }
        let targets = TargetSet::new(image.coordinates())?;
        let mut observed = vec![false; image.len()];
        let mut chosen: Vec<usize> = Vec::with_capacity(budget);
        let pred = predict_gaussian(params, &image.context(&chosen), &targets)?;
        let mut sigma = pred.sigma.into_data();
        for slot in active.iter_mut() {
            let mut best: Option<(usize, f64)> = None;
            for (i, &s) in sigma.iter().enumerate() {
                if !observed[i] && best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
            let (i, _) = best.expect("budget within pixel count");
            observed[i] = true;
            chosen.push(i);
            let pred = predict_gaussian(params, &image.context(&chosen), &targets)?;
            *slot += image_mse(image, pred.mu.data());
            sigma = pred.sigma.into_data();
        }
        let mut order: Vec<usize> = (0..image.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed(seed, n as u64)));
        for (j, slot) in random.iter_mut().enumerate() {
            let pred = predict_gaussian(params, &image.context(&order[..=j]), &targets)?;
            *slot += image_mse(image, pred.mu.data());
        }
    }
    let count = images.len() as f64;
    active.iter_mut().chain(random.iter_mut()).for_each(|v| *v /= count);
    Ok(AcquisitionCurves { active, random })
}
