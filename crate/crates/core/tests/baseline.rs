use cnpkit::autodiff::Tensor;
use cnpkit::baseline::{fit_image_lengthscale, gp_log_marginal, gp_posterior, gp_posterior_mean, knn_predict};
use cnpkit::model::{ContextSet, TargetSet};
use cnpkit::tasks::{column, Image, KernelSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ctx(xs: &[f64], ys: &[f64]) -> ContextSet {
    ContextSet::new(column(xs), column(ys)).unwrap()
}

fn tgt(xs: &[f64]) -> TargetSet {
    TargetSet::new(column(xs)).unwrap()
}

// Dense Gauss–Jordan inverse with partial pivoting.
fn inverse(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap();
        for k in 0..n {
            m.swap(col * n + k, pivot * n + k);
            inv.swap(col * n + k, pivot * n + k);
        }
        let p = m[col * n + col];
        for k in 0..n {
            m[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[i * n + col];
                for k in 0..n {
                    m[i * n + k] -= f * m[col * n + k];
                    inv[i * n + k] -= f * inv[col * n + k];
                }
            }
        }
    }
    inv
}

// Conditions the explicit joint Gaussian over (observations, targets).
fn joint_oracle(kernel: &KernelSpec, xo: &[f64], yo: &[f64], xt: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let all: Vec<f64> = xo.iter().chain(xt).copied().collect();
    let (n, m) = (xo.len(), xt.len());
    let s = n + m;
    let mut joint = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..s {
            joint[i * s + j] = kernel.eval(&[all[i]], &[all[j]]) + if i == j { kernel.jitter } else { 0.0 };
        }
    }
    let koo: Vec<f64> = (0..n * n).map(|k| joint[(k / n) * s + k % n]).collect();
    let inv = inverse(&koo, n);
    let mut mean = vec![0.0; m];
    let mut var = vec![0.0; m];
    for t in 0..m {
        let row = n + t;
        let kto: Vec<f64> = (0..n).map(|j| joint[row * s + j]).collect();
        let w: Vec<f64> = (0..n).map(|j| (0..n).map(|k| kto[k] * inv[k * n + j]).sum()).collect();
        mean[t] = w.iter().zip(yo).map(|(a, b)| a * b).sum();
        // Latent f at the target: prior variance excludes the jitter term.
        var[t] = joint[row * s + row] - kernel.jitter - w.iter().zip(&kto).map(|(a, b)| a * b).sum::<f64>();
    }
    (mean, var)
}

#[test]
fn interpolates_observed_points() {
    let k = KernelSpec::squared_exponential(1.0, 0.4);
    let xs = [-1.5, -0.5, 0.5, 1.5];
    let ys = [0.5, -0.7, 0.9, 0.1];
    let post = gp_posterior(&k, &ctx(&xs, &ys), &tgt(&xs)).unwrap();
    for i in 0..4 {
        assert!((post.mean[i] - ys[i]).abs() < 1e-6);
        assert!(post.variance[i] < 1e-5 && post.variance[i] >= 0.0);
        assert!(post.variance[i] <= 10.0 * k.jitter);
    }
}

#[test]
fn far_targets_revert_to_prior() {
    let k = KernelSpec::squared_exponential(1.5, 0.3);
    let post = gp_posterior(&k, &ctx(&[0.0, 0.1], &[2.0, 1.0]), &tgt(&[50.0])).unwrap();
    assert!(post.mean[0].abs() < 1e-6);
    assert!((post.variance[0] - 1.5).abs() < 1e-6);
    let prior = gp_posterior(&k, &ContextSet::empty(1, 1), &tgt(&[0.0, 1.0])).unwrap();
    assert_eq!(prior.mean, vec![0.0, 0.0]);
    assert_eq!(prior.variance, vec![1.5, 1.5]);
}

#[test]
fn three_observations_two_targets_match_joint_conditioning() {
    let k = KernelSpec::squared_exponential(1.0, 0.5);
    let (xo, yo, xt) = ([-0.8, 0.1, 0.9], [0.3, -1.1, 0.6], [-0.2, 0.5]);
    let post = gp_posterior(&k, &ctx(&xo, &yo), &tgt(&xt)).unwrap();
    let (mean, var) = joint_oracle(&k, &xo, &yo, &xt);
    for i in 0..2 {
        assert!((post.mean[i] - mean[i]).abs() < 1e-8);
        assert!((post.variance[i] - var[i]).abs() < 1e-8);
    }
    assert_eq!(gp_posterior_mean(&k, &ctx(&xo, &yo), &tgt(&xt)).unwrap(), post.mean);
}

#[test]
fn log_marginal_matches_dense_formula() {
    let k = KernelSpec::squared_exponential(0.8, 0.6).with_jitter(1e-3);
    let xs = [-0.5, 0.0, 0.7];
    let ys = [0.2, -0.4, 0.9];
    let cov = k.covariance(&column(&xs));
    let inv = inverse(&cov, 3);
    let quad: f64 = (0..3)
        .map(|i| (0..3).map(|j| ys[i] * inv[i * 3 + j] * ys[j]).sum::<f64>())
        .sum();
    // 3×3 determinant by cofactor expansion.
    let c = &cov;
    let det =
        c[0] * (c[4] * c[8] - c[5] * c[7]) - c[1] * (c[3] * c[8] - c[5] * c[6]) + c[2] * (c[3] * c[7] - c[4] * c[6]);
    let expected = -0.5 * quad - 0.5 * det.ln() - 1.5 * (2.0 * std::f64::consts::PI).ln();
    let got = gp_log_marginal(&k, &column(&xs), &ys).unwrap();
    assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn posterior_matches_joint_oracle(seed in any::<u64>(), n in 1usize..6, m in 1usize..4, ls in 0.2f64..1.5) {
        prop_assume!(n + m <= 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = KernelSpec::squared_exponential(1.0, ls).with_jitter(1e-3);
        let xo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let yo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xt: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let post = gp_posterior(&k, &ctx(&xo, &yo), &tgt(&xt)).unwrap();
        let (mean, var) = joint_oracle(&k, &xo, &yo, &xt);
        for i in 0..m {
            prop_assert!((post.mean[i] - mean[i]).abs() < 1e-8);
            prop_assert!((post.variance[i] - var[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn extra_observation_never_raises_variance(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = KernelSpec::squared_exponential(1.0, 0.5).with_jitter(1e-4);
        let xo: Vec<f64> = (0..=n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let yo: Vec<f64> = (0..=n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xt: Vec<f64> = (0..5).map(|_| rng.random_range(-2.5..2.5)).collect();
        let fewer = gp_posterior(&k, &ctx(&xo[..n], &yo[..n]), &tgt(&xt)).unwrap();
        let more = gp_posterior(&k, &ctx(&xo, &yo), &tgt(&xt)).unwrap();
        for i in 0..5 {
            prop_assert!(more.variance[i] <= fewer.variance[i] + 1e-10);
            prop_assert!(more.variance[i] >= 0.0);
        }
    }

    #[test]
    fn knn_ignores_context_order(seed in any::<u64>(), n in 1usize..15, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let yo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xt: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = ctx(&xo, &yo);
        let rev: Vec<usize> = (0..n).rev().collect();
        let a = knn_predict(&c, &tgt(&xt), k).unwrap();
        let b = knn_predict(&c.permuted(&rev), &tgt(&xt), k).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn knn_exact_hits_and_global_mean() {
    let c = ctx(&[0.0, 1.0, 2.0, 3.0], &[4.0, -1.0, 2.0, 7.0]);
    assert_eq!(knn_predict(&c, &tgt(&[2.0, 0.0]), 1).unwrap(), vec![2.0, 4.0]);
    let all = knn_predict(&c, &tgt(&[-5.0, 1.3]), 4).unwrap();
    assert_eq!(all, vec![3.0, 3.0]);
    // k beyond n is clamped.
    assert_eq!(knn_predict(&c, &tgt(&[1.3]), 40).unwrap(), vec![3.0]);
    // Equidistant neighbours: the lower context index wins.
    assert_eq!(knn_predict(&c, &tgt(&[0.5]), 1).unwrap(), vec![4.0]);
    assert!(knn_predict(&c, &tgt(&[0.5]), 0).is_err());
}

#[test]
fn knn_matches_exhaustive_sort_in_two_dims() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let xo: Vec<Vec<f64>> = (0..10)
        .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
        .collect();
    let yo: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c = ContextSet::new(Tensor::from_rows(&xo).unwrap(), column(&yo)).unwrap();
    let xt: Vec<Vec<f64>> = (0..6)
        .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
        .collect();
    let got = knn_predict(&c, &TargetSet::from_rows(&xt).unwrap(), 3).unwrap();
    for (t, g) in xt.iter().zip(&got) {
        let mut d: Vec<(f64, usize)> = xo
            .iter()
            .enumerate()
            .map(|(i, x)| ((x[0] - t[0]).powi(2) + (x[1] - t[1]).powi(2), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expected = d[..3].iter().map(|&(_, i)| yo[i]).sum::<f64>() / 3.0;
        assert!((g - expected).abs() < 1e-12);
    }
}

#[test]
fn lengthscale_fit_prefers_generating_scale() {
    // Smooth blobs: the fit should reject the smallest candidate.
    let mut images = Vec::new();
    for s in 0..4 {
        let (cr, cc) = (0.3 + 0.1 * s as f64, 0.6 - 0.1 * s as f64);
        let pixels = (0..144)
            .map(|i| {
                let (r, c) = ((i / 12) as f64 / 11.0, (i % 12) as f64 / 11.0);
                (-((r - cr).powi(2) + (c - cc).powi(2)) / (2.0 * 0.2f64.powi(2))).exp()
            })
            .collect();
        images.push(Image::new(12, 12, pixels).unwrap());
    }
    let fit = fit_image_lengthscale(&images, &[0.01, 0.2, 5.0], 1e-4, 60, 3).unwrap();
    assert_eq!(fit.scores.len(), 3);
    assert_eq!(fit.kernel.lengthscale, 0.2);
    let best = fit.scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, fit.scores[1].1);
}
