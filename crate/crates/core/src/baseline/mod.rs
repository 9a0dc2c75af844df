//! Exact oracles: Gaussian-process conditioning and nearest neighbours.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, log_det, solve_lower};
use crate::model::{ContextSet, TargetSet};
use crate::tasks::{Image, KernelSpec};

/// Per-target predictive mean and variance of the latent function.
#[derive(Clone, Debug, PartialEq)]
pub struct GpPosterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

fn single_output(context: &ContextSet) -> Result<&[f64]> {
    if context.y().cols() != 1 {
        return Err(Error::invalid("GP baseline handles scalar outputs only"));
    }
    Ok(context.y().data())
}

/// `μ* = k*ᵀ(K+jI)⁻¹y`, `σ*² = k** − k*ᵀ(K+jI)⁻¹k*`, solved through the
/// Cholesky factor. An empty context gives the prior.
pub fn gp_posterior(kernel: &KernelSpec, context: &ContextSet, targets: &TargetSet) -> Result<GpPosterior> {
    kernel.validate()?;
    let m = targets.len();
    if context.is_empty() {
        return Ok(GpPosterior {
            mean: vec![0.0; m],
            variance: vec![kernel.variance; m],
        });
    }
    let y = single_output(context)?;
    let n = context.len();
    let l = cholesky(&kernel.covariance(context.x()), n)?;
    let alpha = cholesky_solve(&l, n, y);
    let cross = kernel.cross(targets.x(), context.x());
    let mut mean = Vec::with_capacity(m);
    let mut variance = Vec::with_capacity(m);
    for t in 0..m {
        let k_star = &cross[t * n..(t + 1) * n];
        mean.push(k_star.iter().zip(&alpha).map(|(a, b)| a * b).sum());
        let v = solve_lower(&l, n, k_star);
        let reduction: f64 = v.iter().map(|x| x * x).sum();
        variance.push((kernel.variance - reduction).max(0.0));
    }
    Ok(GpPosterior { mean, variance })
}

/// Predictive means only; skips the per-target triangular solves.
pub fn gp_posterior_mean(kernel: &KernelSpec, context: &ContextSet, targets: &TargetSet) -> Result<Vec<f64>> {
    kernel.validate()?;
    if context.is_empty() {
        return Ok(vec![0.0; targets.len()]);
    }
    let y = single_output(context)?;
    let n = context.len();
    let l = cholesky(&kernel.covariance(context.x()), n)?;
    let alpha = cholesky_solve(&l, n, y);
    let cross = kernel.cross(targets.x(), context.x());
    Ok(cross
        .chunks(n)
        .map(|k| k.iter().zip(&alpha).map(|(a, b)| a * b).sum())
        .collect())
}

/// `ln p(y | X)` under `GP(0, k)` with the kernel's jitter as noise.
pub fn gp_log_marginal(kernel: &KernelSpec, x: &Tensor, y: &[f64]) -> Result<f64> {
    kernel.validate()?;
    let n = x.rows();
    let l = cholesky(&kernel.covariance(x), n)?;
    let alpha = cholesky_solve(&l, n, y);
    let quad: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    Ok(-0.5 * quad - 0.5 * log_det(&l, n) - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LengthscaleFit {
    pub kernel: KernelSpec,
    /// `(ℓ, summed log marginal likelihood)` for every candidate.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the candidate `ℓ` with the highest summed marginal likelihood over
/// `pixels_per_image` random pixels of each image. The signal variance is the
/// mean squared intensity.
pub fn fit_image_lengthscale(
    images: &[Image],
    candidates: &[f64],
    jitter: f64,
    pixels_per_image: usize,
    seed: u64,
) -> Result<LengthscaleFit> {
    if images.is_empty() || candidates.is_empty() {
        return Err(Error::invalid("lengthscale fit needs images and candidates"));
    }
    let count: usize = images.iter().map(Image::len).sum();
    let second_moment = images.iter().flat_map(|i| &i.pixels).map(|p| p * p).sum::<f64>() / count as f64;
    let variance = second_moment.max(1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets: Vec<ContextSet> = images
        .iter()
        .map(|img| {
            let k = pixels_per_image.min(img.len());
            let mut picked = index::sample(&mut rng, img.len(), k).into_vec();
            picked.sort_unstable();
            img.context(&picked)
        })
        .collect();
    let mut scores = Vec::with_capacity(candidates.len());
    for &ell in candidates {
        let kernel = KernelSpec::squared_exponential(variance, ell).with_jitter(jitter);
        let mut total = 0.0;
        for s in &subsets {
            total += gp_log_marginal(&kernel, s.x(), s.y().data())?;
        }
        scores.push((ell, total));
    }
    let best = scores.iter().copied().fold(
        (f64::NAN, f64::NEG_INFINITY),
        |acc, s| if s.1 > acc.1 { s } else { acc },
    );
    Ok(LengthscaleFit {
        kernel: KernelSpec::squared_exponential(variance, best.0).with_jitter(jitter),
        scores,
    })
}

/// Mean output of the `k` nearest context inputs (Euclidean, ties to the
/// lower context index); `k` is clamped to the context size.
pub fn knn_predict(context: &ContextSet, targets: &TargetSet, k: usize) -> Result<Vec<f64>> {
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if context.is_empty() {
        return Err(Error::invalid("kNN needs a nonempty context"));
    }
    let y = single_output(context)?;
    let n = context.len();
    let k = k.min(n);
    let cx = context.x();
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(targets.len());
    for t in 0..targets.len() {
        let q = targets.x().row(t);
        dist.clear();
        dist.extend((0..n).map(|i| {
            let d: f64 = cx.row(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, i)
        }));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < n {
            dist.select_nth_unstable_by(k - 1, cmp);
        }
        let sum: f64 = dist[..k].iter().map(|&(_, i)| y[i]).sum();
        out.push(sum / k as f64);
    }
    Ok(out)
}
