use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gp::{gp_sample_curve_with, gp_sample_switching_with};
use super::kernel::KernelSpec;
use super::{TaskInstance, TaskMeta, TaskSampler};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CurveKind {
    Fixed(KernelSpec),
    Switching(KernelSpec, KernelSpec),
}

/// 1-D regression tasks: `points` inputs uniform over `x_range`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveTasks {
    pub kind: CurveKind,
    pub x_range: (f64, f64),
    pub points: usize,
}

impl CurveTasks {
    pub fn fixed(kernel: KernelSpec, points: usize) -> Self {
        Self {
            kind: CurveKind::Fixed(kernel),
            x_range: (-2.0, 2.0),
            points,
        }
    }

    pub fn switching(first: KernelSpec, second: KernelSpec, points: usize) -> Self {
        Self {
            kind: CurveKind::Switching(first, second),
            ..Self::fixed(first, points)
        }
    }
}

pub fn make_regression_task(tasks: &CurveTasks, seed: u64) -> Result<TaskInstance> {
    make_regression_task_with(tasks, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Samples inputs, a curve through them, a shuffled pair order, and a context
/// size uniform on `1..=n`.
pub fn make_regression_task_with<R: Rng>(tasks: &CurveTasks, rng: &mut R) -> Result<TaskInstance> {
    let n = tasks.points;
    if n == 0 {
        return Err(Error::invalid("regression tasks need at least one point"));
    }
    let (lo, hi) = tasks.x_range;
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty x range [{lo}, {hi}]")));
    }
    let mut xs: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    xs.sort_by(f64::total_cmp);
    let (ys, meta) = match &tasks.kind {
        CurveKind::Fixed(k) => (gp_sample_curve_with(k, &xs, rng)?, TaskMeta::Curve { kernel: *k }),
        CurveKind::Switching(a, b) => {
            let s = gp_sample_switching_with((a, b), &xs, rng)?;
            (
                s.ys,
                TaskMeta::Switching {
                    kernels: (*a, *b),
                    switch_point: s.switch_point,
                },
            )
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let x = order.iter().map(|&i| xs[i]).collect();
    let y = order.iter().map(|&i| ys[i]).collect();
    let context_size = rng.random_range(0..n) + 1;
    Ok(TaskInstance {
        x: Tensor::matrix(n, 1, x)?,
        y: Tensor::matrix(n, 1, y)?,
        context_size,
        meta,
    })
}

impl TaskSampler for CurveTasks {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<TaskInstance> {
        make_regression_task_with(self, rng)
    }

    fn x_dim(&self) -> usize {
        1
    }

    fn y_dim(&self) -> usize {
        1
    }
}
