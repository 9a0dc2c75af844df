use cnpkit::autodiff::{grad_check, AdamConfig, Graph, Tensor, DEFAULT_STEP};
use cnpkit::model::{checkpoint, CnpParams, ModelConfig};
use cnpkit::tasks::{column, make_regression_task, CurveTasks, KernelSpec, TaskInstance, TaskMeta};
use cnpkit::train::{
    cnp_loss, cnp_loss_value, elbo_loss, evaluate_with, gaussian_nll_point, heldout_tasks, metrics_csv, train,
    TrainConfig, Workload,
};
use cnpkit::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(config: ModelConfig) -> ModelConfig {
    ModelConfig {
        repr_dim: 8,
        hidden: 8,
        ..config
    }
}

fn task(xs: &[f64], ys: &[f64], context_size: usize) -> TaskInstance {
    TaskInstance {
        x: column(xs),
        y: column(ys),
        context_size,
        meta: TaskMeta::Curve {
            kernel: KernelSpec::squared_exponential(1.0, 0.4),
        },
    }
}

// Zero weights except the σ-channel bias, tuned so softplus(b) + floor = 1.
fn unit_gaussian_model() -> CnpParams {
    let mut params = CnpParams::init(tiny(ModelConfig::regression(1, 1)), 0)
        .unwrap()
        .zeroed();
    let last = params.layout().decoder.rest.last().unwrap().1;
    params.tensors[last].data_mut()[1] = (0.99f64.exp() - 1.0).ln();
    params
}

#[test]
fn forced_unit_gaussian_loss_is_analytic() {
    let params = unit_gaussian_model();
    let ys = [0.5, -1.2, 2.0, 0.0];
    let t = task(&[-1.0, 0.0, 0.5, 1.5], &ys, 2);
    let expected = ys
        .iter()
        .map(|y| 0.5 * (2.0 * std::f64::consts::PI).ln() + y * y / 2.0)
        .sum::<f64>()
        / 4.0;
    assert!((cnp_loss_value(&params, &t).unwrap() - expected).abs() < 1e-12);
    assert!((gaussian_nll_point(2.0, 0.0, 1.0) - (0.5 * (2.0 * std::f64::consts::PI).ln() + 2.0)).abs() < 1e-15);
}

#[test]
fn full_context_still_scores_every_point() {
    let params = unit_gaussian_model();
    let ys = [0.3, -0.4, 1.1];
    let xs = [-0.5, 0.2, 0.9];
    let full = cnp_loss_value(&params, &task(&xs, &ys, 3)).unwrap();
    let expected = ys.iter().map(|y| gaussian_nll_point(*y, 0.0, 1.0)).sum::<f64>() / 3.0;
    assert!((full - expected).abs() < 1e-12);
    assert!(cnp_loss_value(&params, &task(&xs, &ys, 0)).is_err());
    assert!(cnp_loss_value(&params, &task(&xs, &ys, 4)).is_err());
}

#[test]
fn cnp_loss_gradient_passes_finite_differences() {
    let params = CnpParams::init(tiny(ModelConfig::regression(1, 1)), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ys: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t = task(&xs, &ys, 3);
    let report = grad_check(
        |g, flat| {
            let bound = params.bind_flat(g, flat)?;
            cnp_loss(g, &bound, &params, &t)
        },
        &params.flatten(),
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn elbo_kl_vanishes_when_posterior_equals_prior() {
    // With a single target that is also the whole context, the prior and
    // posterior condition on the same set.
    let params = CnpParams::init(tiny(ModelConfig::latent(1, 1, 3)), 5).unwrap();
    let t = task(&[0.3, 0.7], &[1.0, -0.5], 2);
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let nodes = elbo_loss(&mut g, &bound, &params, &t, &[0.1, -0.2, 0.3]).unwrap();
    assert_eq!(g.value(nodes.kl).item(), 0.0);
    assert_eq!(g.value(nodes.loss).item(), g.value(nodes.nll).item());

    let partial = task(&[0.3, 0.7, -1.0], &[1.0, -0.5, 2.0], 1);
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let nodes = elbo_loss(&mut g, &bound, &params, &partial, &[0.0; 3]).unwrap();
    let kl = g.value(nodes.kl).item();
    assert!(kl >= 0.0);
    let expected = g.value(nodes.nll).item() + kl / 3.0;
    assert!((g.value(nodes.loss).item() - expected).abs() < 1e-12);
    assert!(elbo_loss(&mut g, &bound, &params, &partial, &[0.0; 2]).is_err());
}

fn curve_tasks() -> CurveTasks {
    CurveTasks::fixed(KernelSpec::squared_exponential(1.0, 0.4), 12)
}

fn quick_config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 3,
        adam: AdamConfig {
            learning_rate: 1e-3,
            ..AdamConfig::default()
        },
        seed: 17,
        eval_every: 2,
        eval_tasks: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_steps_are_rejected() {
    let params = CnpParams::init(tiny(ModelConfig::regression(1, 1)), 0).unwrap();
    let tasks = curve_tasks();
    let err = train(params, &Workload::Regression(&tasks), &quick_config(0));
    assert!(matches!(err, Err(Error::InvalidArgument(_))));
}

#[test]
fn one_step_applies_one_update() {
    let params = CnpParams::init(tiny(ModelConfig::regression(1, 1)), 0).unwrap();
    let tasks = curve_tasks();
    let out = train(params.clone(), &Workload::Regression(&tasks), &quick_config(1)).unwrap();
    assert_eq!(out.optimizer_steps, 1);
    assert_eq!(out.log.len(), 1);
    assert_ne!(out.params, params);
    // Evaluations at step 0 and at the end.
    let steps: Vec<usize> = out.metrics.iter().map(|m| m.step).collect();
    assert_eq!(steps, vec![0, 1]);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = curve_tasks();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let ckpt = dir.path().join(format!("m{run}.cnpk"));
        let metrics = dir.path().join(format!("metrics{run}.csv"));
        let config = TrainConfig {
            checkpoint_path: Some(ckpt.clone()),
            metrics_path: Some(metrics.clone()),
            ..quick_config(5)
        };
        let params = CnpParams::init(tiny(ModelConfig::regression(1, 1)), 4).unwrap();
        let out = train(params, &Workload::Regression(&tasks), &config).unwrap();
        assert_eq!(checkpoint::load(&ckpt).unwrap(), out.params);
        assert_eq!(std::fs::read_to_string(&metrics).unwrap(), metrics_csv(&out.metrics));
        outputs.push((std::fs::read(&ckpt).unwrap(), std::fs::read(&metrics).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert!(text.starts_with("step,context_size,nll,mse,wall_s\n0,random,"));
}

#[test]
fn latent_training_logs_nonnegative_kl() {
    let tasks = curve_tasks();
    let params = CnpParams::init(tiny(ModelConfig::latent(1, 1, 4)), 2).unwrap();
    let out = train(params, &Workload::Regression(&tasks), &quick_config(6)).unwrap();
    assert_eq!(out.log.len(), 6);
    assert!(out
        .log
        .iter()
        .all(|s| s.kl.is_some_and(|k| k >= 0.0) && s.loss.is_finite()));
}

#[test]
fn kl_warmup_downweights_only_early_steps() {
    let tasks = curve_tasks();
    let params = CnpParams::init(tiny(ModelConfig::latent(1, 1, 4)), 2).unwrap();
    let run = |warmup| {
        let config = TrainConfig {
            kl_warmup: warmup,
            ..quick_config(3)
        };
        train(params.clone(), &Workload::Regression(&tasks), &config).unwrap()
    };
    let (full, one, ramp) = (run(0), run(1), run(4));
    assert_eq!(full.params, one.params);
    assert_eq!(full.log[0].kl, ramp.log[0].kl);
    assert!(ramp.log[0].loss <= full.log[0].loss);
}

#[test]
fn perfect_predictor_scores_zero_mse() {
    let tasks = heldout_tasks(&curve_tasks(), 5, 9).unwrap();
    let metrics = evaluate_with(&tasks, &[None, Some(3)], |t| {
        Ok((t.y.data().to_vec(), vec![0.5; t.len()]))
    })
    .unwrap();
    for m in &metrics {
        assert_eq!(m.mse, 0.0);
        assert!((m.nll - gaussian_nll_point(0.0, 0.0, 0.5)).abs() < 1e-12);
        assert_eq!(m.mean_sigma, 0.5);
    }
    assert_eq!(metrics[1].context_size, Some(3));
    let total: usize = metrics[0].histogram.iter().map(|(_, c)| c).sum();
    assert_eq!(total, 5);
}

#[test]
fn heldout_tasks_are_reproducible() {
    let a = heldout_tasks(&curve_tasks(), 4, 1).unwrap();
    assert_eq!(a, heldout_tasks(&curve_tasks(), 4, 1).unwrap());
    assert_ne!(a, heldout_tasks(&curve_tasks(), 4, 2).unwrap());
    assert_eq!(make_regression_task(&curve_tasks(), 1).unwrap().len(), 12);
}

#[test]
fn divergence_reports_step() {
    let mut params = CnpParams::init(tiny(ModelConfig::regression(1, 1)), 0).unwrap();
    let last = params.layout().decoder.rest.last().unwrap().1;
    params.tensors[last].data_mut()[0] = f64::NAN;
    let tasks = curve_tasks();
    match train(params, &Workload::Regression(&tasks), &quick_config(3)) {
        Err(Error::Diverged { step: 0, .. }) => {}
        other => panic!("{:?}", other.err()),
    }
    // A learning rate this large overflows the weights within a few steps.
    let params = CnpParams::init(tiny(ModelConfig::regression(1, 1)), 0).unwrap();
    let config = TrainConfig {
        adam: AdamConfig {
            learning_rate: 1e300,
            ..AdamConfig::default()
        },
        ..quick_config(5)
    };
    match train(params, &Workload::Regression(&tasks), &config) {
        Err(Error::Diverged { step, message }) => {
            assert!((1..=5).contains(&step));
            assert!(message.contains("last metrics"));
        }
        other => panic!("{:?}", other.err()),
    }
}

#[test]
fn constant_tensor_loss_is_finite() {
    let params = CnpParams::init(tiny(ModelConfig::regression(2, 1)), 0).unwrap();
    let t = TaskInstance {
        x: Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap(),
        y: column(&[0.2, 0.8]),
        context_size: 1,
        meta: TaskMeta::Curve {
            kernel: KernelSpec::squared_exponential(1.0, 0.4),
        },
    };
    assert!(cnp_loss_value(&params, &t).unwrap().is_finite());
}
