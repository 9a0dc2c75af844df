//! Trains the latent-variable variant on GP curves and shows that coherent
//! draws spread out with few observations and agree with many.
//!
//! cargo run --release --example latent_sampling [steps]

use cnpkit::autodiff::AdamConfig;
use cnpkit::model::{latent_prior, sample_coherent, CnpParams, ModelConfig, TargetSet};
use cnpkit::tasks::{column, CurveTasks, KernelSpec};
use cnpkit::train::{heldout_tasks, train, TrainConfig, Workload};

fn main() -> cnpkit::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let tasks = CurveTasks::fixed(KernelSpec::squared_exponential(1.0, 0.4), 30);
    let model = ModelConfig {
        repr_dim: 64,
        hidden: 64,
        ..ModelConfig::latent(1, 1, 16)
    };
    let config = TrainConfig {
        steps,
        batch_size: 16,
        adam: AdamConfig {
            learning_rate: 5e-4,
            ..AdamConfig::default()
        },
        eval_every: 500,
        eval_tasks: 32,
        ..TrainConfig::default()
    };
    let out = train(CnpParams::init(model, 0)?, &Workload::Regression(&tasks), &config)?;
    let last = out.log.last().expect("at least one step");
    println!("final loss {:.4}, KL {:.4}", last.loss, last.kl.unwrap_or(f64::NAN));

    let task = &heldout_tasks(&tasks, 1, 99)?[0];
    let grid: Vec<f64> = (0..17).map(|i| -2.0 + 0.25 * i as f64).collect();
    let targets = TargetSet::new(column(&grid))?;
    for n in [1, 5, 30] {
        let context = task.with_context_size(n)?.context();
        let prior = latent_prior(&out.params, &context)?;
        let draws = sample_coherent(&out.params, &context, &targets, 6, 7)?;
        let spread: f64 = (0..grid.len())
            .map(|i| {
                let vals: Vec<f64> = draws.iter().map(|d| d.mu.data()[i]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
            })
            .sum::<f64>()
            / grid.len() as f64;
        let mean_sd = prior.sigma.iter().sum::<f64>() / prior.sigma.len() as f64;
        println!("{n:>3} context points: mean latent sd {mean_sd:.4}, across-draw variance {spread:.5}");
        for d in draws.iter().take(3) {
            let row: Vec<String> = d.mu.data().iter().step_by(4).map(|v| format!("{v:>6.2}")).collect();
            println!("      {}", row.join(" "));
        }
    }
    Ok(())
}
