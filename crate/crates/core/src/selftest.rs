//! Invariant suite: gradient checks, permutation invariance, streaming
//! aggregation, GP conditioning and KL nonnegativity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{grad_check, kl_diag_gaussian, Graph, NodeId, Tensor, DEFAULT_STEP};
use crate::baseline::gp_posterior;
use crate::error::Result;
use crate::model::{
    encode_one, latent_posterior, latent_prior, predict_gaussian, AggregateState, CnpParams, ContextSet, ModelConfig,
    TargetSet,
};
use crate::tasks::{split_seed, KernelSpec, TaskInstance, TaskMeta};
use crate::train::cnp_loss;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Worst measured value.
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    fn below(name: &'static str, value: f64, limit: f64) -> Self {
        Self {
            name,
            value,
            limit,
            passed: value < limit,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

type Unary = fn(&mut Graph, NodeId) -> Result<NodeId>;

/// `sum(w ⊙ op(θ))` with random weights, checked against central differences.
fn probe_error(op: &dyn Fn(&mut Graph, NodeId) -> Result<NodeId>, theta: &Tensor, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut g = Graph::new();
    let t = g.constant(theta.clone());
    let out = op(&mut g, t)?;
    let w = normal(rng, g.value(out).shape(), 1.0);
    let report = grad_check(
        |g, t| {
            let y = op(g, t)?;
            if g.value(y).is_scalar() {
                return Ok(y);
            }
            let wn = g.constant(w.clone());
            let p = g.mul(y, wn)?;
            g.sum(p)
        },
        theta,
        DEFAULT_STEP,
    )?;
    Ok(report.max_relative_error)
}

pub fn primitive_gradients(seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for round in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, round));
        let x = normal(&mut rng, &[3, 4], 1.5);
        let positive = x.map(|v| v.abs() + 0.2);
        let unary: [(Unary, &Tensor); 11] = [
            (|g, t| g.tanh(t), &x),
            (|g, t| g.relu(t), &x),
            (|g, t| g.softplus(t), &x),
            (|g, t| g.exp(t), &x),
            (|g, t| g.log(t), &positive),
            (|g, t| g.neg(t), &x),
            (|g, t| g.scale(t, -2.5), &x),
            (|g, t| g.mean(t, 0), &x),
            (|g, t| g.mean(t, 1), &x),
            (|g, t| g.slice(t, 1, 3), &x),
            (
                |g, t| {
                    let c = g.slice(t, 0, 2)?;
                    g.concat(&[t, c])
                },
                &x,
            ),
        ];
        for (op, input) in unary {
            worst = worst.max(probe_error(&op, input, &mut rng)?);
        }
        let other = normal(&mut rng, &[4, 2], 1.0);
        let row = normal(&mut rng, &[4], 1.0);
        let (o, xx) = (other.clone(), x.clone());
        worst = worst.max(probe_error(
            &|g, t| {
                let b = g.constant(o.clone());
                g.matmul(t, b)
            },
            &x,
            &mut rng,
        )?);
        worst = worst.max(probe_error(
            &|g, t| {
                let a = g.constant(xx.clone());
                g.matmul(a, t)
            },
            &other,
            &mut rng,
        )?);
        for k in 0..3 {
            let xx = x.clone();
            worst = worst.max(probe_error(
                &move |g, t| {
                    let a = g.constant(xx.clone());
                    match k {
                        0 => g.add(a, t),
                        1 => g.sub(a, t),
                        _ => g.mul(a, t),
                    }
                },
                &row,
                &mut rng,
            )?);
        }
        let y = normal(&mut rng, &[5, 2], 1.0);
        let mu = normal(&mut rng, &[5, 2], 1.0);
        let sigma = normal(&mut rng, &[5, 2], 1.0).map(|v| v.abs() + 0.3);
        let (yy, ss) = (y.clone(), sigma.clone());
        worst = worst.max(probe_error(
            &|g, t| {
                let y = g.constant(yy.clone());
                let s = g.constant(ss.clone());
                g.gaussian_nll(y, t, s)
            },
            &mu,
            &mut rng,
        )?);
        let (yy, mm) = (y.clone(), mu.clone());
        worst = worst.max(probe_error(
            &|g, t| {
                let y = g.constant(yy.clone());
                let m = g.constant(mm.clone());
                g.gaussian_nll(y, m, t)
            },
            &sigma,
            &mut rng,
        )?);
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
        worst = worst.max(probe_error(&|g, t| g.categorical_ce(t, &labels), &x, &mut rng)?);
        let (mp, sp) = (y.clone(), sigma.clone());
        let sq = sigma.map(|v| 0.7 * v + 0.1);
        worst = worst.max(probe_error(
            &|g, t| {
                let s = g.constant(sq.clone());
                let m = g.constant(mp.clone());
                let p = g.constant(sp.clone());
                g.kl_diag_gaussian(t, s, m, p)
            },
            &y.map(|v| v * 0.5),
            &mut rng,
        )?);
    }
    Ok(worst)
}

fn small_regression_task(seed: u64, n: usize) -> TaskInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TaskInstance {
        x: normal(&mut rng, &[n, 1], 1.0),
        y: normal(&mut rng, &[n, 1], 1.0),
        context_size: 3.min(n),
        meta: TaskMeta::Curve {
            kernel: KernelSpec::squared_exponential(1.0, 0.4),
        },
    }
}

/// Max relative gradient error of the CNP loss on a 5-point task.
pub fn cnp_loss_gradient(seed: u64) -> Result<f64> {
    let config = ModelConfig {
        repr_dim: 64,
        hidden: 16,
        ..ModelConfig::regression(1, 1)
    };
    let params = CnpParams::init(config, seed)?;
    let task = small_regression_task(seed ^ 1, 5);
    let report = grad_check(
        |g, flat| {
            let bound = params.bind_flat(g, flat)?;
            cnp_loss(g, &bound, &params, &task)
        },
        &params.flatten(),
        DEFAULT_STEP,
    )?;
    Ok(report.max_relative_error)
}

/// Worst output difference between a context set and a random permutation of it.
pub fn permutation_invariance(seed: u64, instances: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let config = ModelConfig {
        repr_dim: 16,
        hidden: 16,
        ..ModelConfig::regression(2, 1)
    };
    for i in 0..instances {
        let s = split_seed(seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let params = CnpParams::init(config.clone(), s)?;
        let n = rng.random_range(1..=20);
        let m = rng.random_range(1..=10);
        let context = ContextSet::new(normal(&mut rng, &[n, 2], 1.0), normal(&mut rng, &[n, 1], 1.0))?;
        let targets = TargetSet::new(normal(&mut rng, &[m, 2], 1.0))?;
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let a = predict_gaussian(&params, &context, &targets)?;
        let b = predict_gaussian(&params, &context.permuted(&order), &targets)?;
        worst = worst.max(a.mu.max_abs_diff(&b.mu)).max(a.sigma.max_abs_diff(&b.sigma));
    }
    Ok(worst)
}

/// Streaming aggregation over encoder outputs against the batch mean.
pub fn streaming_aggregation(seed: u64) -> Result<f64> {
    let config = ModelConfig {
        repr_dim: 32,
        hidden: 16,
        ..ModelConfig::regression(1, 1)
    };
    let params = CnpParams::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AggregateState::new(32);
    let mut sum = vec![0.0; 32];
    let mut worst: f64 = 0.0;
    for k in 1..=100 {
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let r = encode_one(&params, &[x], &[y])?;
        state.update(&r)?;
        sum.iter_mut().zip(&r).for_each(|(s, v)| *s += v);
        let mean = state.mean().expect("nonempty");
        for (a, s) in mean.iter().zip(&sum) {
            worst = worst.max((a - s / k as f64).abs());
        }
    }
    Ok(worst)
}

/// Solves `A X = B` by Gauss–Jordan elimination with partial pivoting.
fn dense_solve(a: &[f64], n: usize, b: &[f64], cols: usize) -> Vec<f64> {
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs()))
            .unwrap();
        for k in 0..n {
            a.swap(c * n + k, p * n + k);
        }
        for k in 0..cols {
            x.swap(c * cols + k, p * cols + k);
        }
        let d = a[c * n + c];
        for r in 0..n {
            if r == c {
                continue;
            }
            let f = a[r * n + c] / d;
            for k in 0..n {
                a[r * n + k] -= f * a[c * n + k];
            }
            for k in 0..cols {
                x[r * cols + k] -= f * x[c * cols + k];
            }
        }
    }
    for r in 0..n {
        let d = a[r * n + r];
        for k in 0..cols {
            x[r * cols + k] /= d;
        }
    }
    x
}

/// GP posterior against dense conditioning of the explicit joint Gaussian,
/// over every `(n, m)` with `n + m ≤ 8`.
pub fn gp_against_joint(seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for n in 1..8 {
        for m in 1..=8 - n {
            for _ in 0..5 {
                let ell = rng.random_range(0.3..1.5);
                let kernel = KernelSpec::squared_exponential(rng.random_range(0.5..2.0), ell).with_jitter(1e-3);
                let xo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
                let xt: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let all: Vec<f64> = xo.iter().chain(&xt).copied().collect();
                let size = n + m;
                let joint: Vec<f64> = (0..size * size)
                    .map(|ij| {
                        let (i, j) = (ij / size, ij % size);
                        let v = kernel.eval(&[all[i]], &[all[j]]);
                        if i == j && i < n {
                            v + kernel.jitter
                        } else {
                            v
                        }
                    })
                    .collect();
                let soo: Vec<f64> = (0..n * n).map(|ij| joint[(ij / n) * size + ij % n]).collect();
                let sot: Vec<f64> = (0..n * m).map(|ij| joint[(ij / m) * size + n + ij % m]).collect();
                let alpha = dense_solve(&soo, n, &y, 1);
                let beta = dense_solve(&soo, n, &sot, m);
                let post = gp_posterior(
                    &kernel,
                    &ContextSet::new(Tensor::matrix(n, 1, xo)?, Tensor::matrix(n, 1, y)?)?,
                    &TargetSet::new(Tensor::matrix(m, 1, xt)?)?,
                )?;
                for t in 0..m {
                    let mean: f64 = (0..n).map(|i| sot[i * m + t] * alpha[i]).sum();
                    let var =
                        joint[(n + t) * size + n + t] - (0..n).map(|i| sot[i * m + t] * beta[i * m + t]).sum::<f64>();
                    worst = worst
                        .max((mean - post.mean[t]).abs())
                        .max((var - post.variance[t]).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Most negative KL found, between random diagonal Gaussians and between the
/// latent posterior and prior of random latent models (0 when all are ≥ 0).
pub fn kl_nonnegative(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lowest: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.random_range(1..8);
        let mut draw = |s: f64| {
            (0..d)
                .map(|_| s * rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<f64>>()
        };
        let (mq, mp) = (draw(2.0), draw(2.0));
        let sq: Vec<f64> = draw(1.0).iter().map(|v| v.exp()).collect();
        let sp: Vec<f64> = draw(1.0).iter().map(|v| v.exp()).collect();
        lowest = lowest.min(kl_diag_gaussian(&mq, &sq, &mp, &sp));
    }
    let config = ModelConfig {
        repr_dim: 8,
        hidden: 8,
        ..ModelConfig::latent(1, 1, 4)
    };
    for i in 0..50 {
        let params = CnpParams::init(config.clone(), split_seed(seed, i))?;
        let task = small_regression_task(split_seed(seed ^ 2, i), 6);
        let prior = latent_prior(&params, &task.context())?;
        let rest = ContextSet::new(task.x.select_rows(&[3, 4, 5]), task.y.select_rows(&[3, 4, 5]))?;
        let post = latent_posterior(&params, &task.context(), &rest)?;
        lowest = lowest.min(kl_diag_gaussian(&post.mu, &post.sigma, &prior.mu, &prior.sigma));
    }
    Ok(lowest)
}

/// Runs the whole suite.
pub fn run(seed: u64) -> Result<Vec<Check>> {
    let kl = kl_nonnegative(seed)?;
    Ok(vec![
        Check::below("primitive gradients (max rel. error)", primitive_gradients(seed)?, 1e-4),
        Check::below(
            "cnp_loss gradient, 5-point task (max rel. error)",
            cnp_loss_gradient(seed)?,
            1e-4,
        ),
        Check::below(
            "permutation invariance, 1000 instances (max |diff|)",
            permutation_invariance(seed, 1000)?,
            1e-9,
        ),
        Check::below(
            "streaming vs batch aggregation (max |diff|)",
            streaming_aggregation(seed)?,
            1e-9,
        ),
        Check::below(
            "GP posterior vs joint conditioning, n+m<=8 (max |diff|)",
            gp_against_joint(seed)?,
            1e-8,
        ),
        Check {
            name: "KL(posterior || prior) >= 0 (min value)",
            value: kl,
            limit: 0.0,
            passed: kl >= 0.0,
        },
    ])
}
