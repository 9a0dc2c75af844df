//! Trains a small CNP on GP curves and compares it with the exact GP and
//! kNN on held-out curves at several context sizes.
//!
//! cargo run --release --example curve_regression [steps]

use cnpkit::autodiff::AdamConfig;
use cnpkit::baseline::knn_predict;
use cnpkit::model::{predict_gaussian, CnpParams, ModelConfig, TargetSet};
use cnpkit::tasks::{column, CurveTasks, KernelSpec};
use cnpkit::train::{evaluate, evaluate_gp, evaluate_with, heldout_tasks, train, TrainConfig, Workload};

fn main() -> cnpkit::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let kernel = KernelSpec::squared_exponential(1.0, 0.4);
    let tasks = CurveTasks::fixed(kernel, 50);
    let model = ModelConfig {
        repr_dim: 64,
        hidden: 64,
        ..ModelConfig::regression(1, 1)
    };
    let config = TrainConfig {
        steps,
        batch_size: 16,
        adam: AdamConfig {
            learning_rate: 5e-4,
            ..AdamConfig::default()
        },
        eval_every: 500,
        eval_tasks: 64,
        ..TrainConfig::default()
    };
    let params = CnpParams::init(model, 0)?;
    let out = train(params, &Workload::Regression(&tasks), &config)?;
    for row in &out.metrics {
        println!("step {:>5}  held-out nll {:.4}", row.step, row.nll);
    }

    let held = heldout_tasks(&tasks, 100, 12345)?;
    let sizes = [Some(3), Some(10), Some(30)];
    let cnp = evaluate(&out.params, &held, &sizes)?;
    let gp = evaluate_gp(&kernel, &held, &sizes)?;
    let knn = evaluate_with(&held, &sizes, |t| {
        Ok((knn_predict(&t.context(), &t.targets(), 1)?, vec![f64::NAN; t.len()]))
    })?;
    println!(
        "{:>8} {:>12} {:>12} {:>10} {:>10} {:>10}",
        "context", "cnp nll*", "gp nll*", "cnp mse", "gp mse", "knn mse"
    );
    for i in 0..sizes.len() {
        println!(
            "{:>8} {:>12.4} {:>12.4} {:>10.5} {:>10.5} {:>10.5}",
            sizes[i].unwrap(),
            cnp[i].nll_unobserved,
            gp[i].nll_unobserved,
            cnp[i].mse,
            gp[i].mse,
            knn[i].mse
        );
    }
    println!("* on unobserved targets");

    // One curve: the predictive band around five observations.
    let t = held[0].with_context_size(5)?;
    let grid: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
    let pred = predict_gaussian(&out.params, &t.context(), &TargetSet::new(column(&grid))?)?;
    for (x, (m, s)) in grid.iter().zip(pred.mu.data().iter().zip(pred.sigma.data())) {
        println!("x {x:>5.2}  mean {m:>7.3}  sigma {s:.3}");
    }
    Ok(())
}
