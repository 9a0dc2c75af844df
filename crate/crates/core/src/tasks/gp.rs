//! Exact sampling of Gaussian-process curves.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::kernel::{column, KernelSpec};
use crate::error::{Error, Result};
use crate::linalg::cholesky;

pub const MAX_POINTS: usize = 2000;

fn check_inputs(xs: &[f64]) -> Result<()> {
    if xs.len() > MAX_POINTS {
        return Err(Error::invalid(format!(
            "{} inputs exceed the {MAX_POINTS}-point sampling bound",
            xs.len()
        )));
    }
    if let Some(w) = xs.windows(2).find(|w| !(w[0] < w[1])) {
        return Err(Error::invalid(format!(
            "inputs must be sorted and distinct, found {} before {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// One draw of `f(xs)` with `f ~ GP(0, k)`.
pub fn gp_sample_curve(kernel: &KernelSpec, xs: &[f64], seed: u64) -> Result<Vec<f64>> {
    gp_sample_curve_with(kernel, xs, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn gp_sample_curve_with<R: Rng>(kernel: &KernelSpec, xs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    kernel.validate()?;
    check_inputs(xs)?;
    let n = xs.len();
    let l = cholesky(&kernel.covariance(&column(xs)), n)?;
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok((0..n).map(|i| (0..=i).map(|k| l[i * n + k] * eps[k]).sum()).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwitchingSample {
    pub ys: Vec<f64>,
    pub switch_point: f64,
}

/// Curve that follows a draw from the first kernel left of a uniform switch
/// point and an independent draw from the second kernel from there on.
pub fn gp_sample_switching(kernels: (&KernelSpec, &KernelSpec), xs: &[f64], seed: u64) -> Result<SwitchingSample> {
    gp_sample_switching_with(kernels, xs, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn gp_sample_switching_with<R: Rng>(
    kernels: (&KernelSpec, &KernelSpec),
    xs: &[f64],
    rng: &mut R,
) -> Result<SwitchingSample> {
    check_inputs(xs)?;
    let (lo, hi) = match (xs.first(), xs.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => (0.0, 0.0),
    };
    let s = lo + (hi - lo) * rng.random::<f64>();
    gp_sample_switching_at(kernels, xs, s, rng)
}

/// Switching curve with a caller-chosen switch point.
pub fn gp_sample_switching_at<R: Rng>(
    kernels: (&KernelSpec, &KernelSpec),
    xs: &[f64],
    switch_point: f64,
    rng: &mut R,
) -> Result<SwitchingSample> {
    let left = gp_sample_curve_with(kernels.0, xs, rng)?;
    let right = gp_sample_curve_with(kernels.1, xs, rng)?;
    let ys = xs
        .iter()
        .zip(left.into_iter().zip(right))
        .map(|(&x, (a, b))| if x < switch_point { a } else { b })
        .collect();
    Ok(SwitchingSample { ys, switch_point })
}
