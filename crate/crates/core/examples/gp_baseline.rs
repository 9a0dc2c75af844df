//! Exact GP regression and kNN on one sampled curve, plus the image
//! lengthscale fit used by the image baseline.
//!
//! cargo run --release --example gp_baseline

use cnpkit::baseline::{fit_image_lengthscale, gp_log_marginal, gp_posterior, knn_predict};
use cnpkit::model::{ContextSet, TargetSet};
use cnpkit::tasks::{column, gp_sample_curve, make_glyph_dataset, KernelSpec};

fn main() -> cnpkit::Result<()> {
    let kernel = KernelSpec::squared_exponential(1.0, 0.4);
    let xs: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
    let ys = gp_sample_curve(&kernel, &xs, 3)?;

    let observed = [2, 9, 17, 30, 38];
    let ctx_x: Vec<f64> = observed.iter().map(|&i| xs[i]).collect();
    let ctx_y: Vec<f64> = observed.iter().map(|&i| ys[i]).collect();
    let context = ContextSet::new(column(&ctx_x), column(&ctx_y))?;
    let targets = TargetSet::new(column(&xs))?;
    let post = gp_posterior(&kernel, &context, &targets)?;
    let knn = knn_predict(&context, &targets, 1)?;
    println!(
        "log marginal of the context: {:.4}",
        gp_log_marginal(&kernel, context.x(), &ctx_y)?
    );
    println!(
        "{:>6} {:>8} {:>8} {:>8} {:>8}",
        "x", "truth", "gp mean", "gp sd", "1-nn"
    );
    for i in (0..xs.len()).step_by(4) {
        println!(
            "{:>6.2} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            xs[i],
            ys[i],
            post.mean[i],
            post.variance[i].sqrt(),
            knn[i]
        );
    }

    let glyphs = make_glyph_dataset(4, 2, 28, 1)?;
    let fit = fit_image_lengthscale(&glyphs.images, &[0.02, 0.05, 0.1, 0.2], 1e-4, 300, 0)?;
    for (ell, score) in &fit.scores {
        println!("lengthscale {ell:<5} log marginal {score:.1}");
    }
    println!(
        "chosen: {} (variance {:.4})",
        fit.kernel.lengthscale, fit.kernel.variance
    );
    Ok(())
}
