//! Trains a pixel-completion CNP on procedural glyphs, then completes a
//! held-out glyph from random, ordered and actively chosen pixels. Writes
//! PGM files to the directory given as the first argument.
//!
//! cargo run --release --example image_completion [out_dir] [steps]

use std::path::PathBuf;

use cnpkit::autodiff::AdamConfig;
use cnpkit::io::pgm::write_pgm;
use cnpkit::model::{predict_gaussian, CnpParams, ModelConfig, TargetSet};
use cnpkit::tasks::{make_glyph_dataset, select_pixels, Image, ImageTasks, SelectionMode};
use cnpkit::train::{train, TrainConfig, Workload};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| "completion".into()));
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(400);
    std::fs::create_dir_all(&out_dir)?;

    let mut glyphs = make_glyph_dataset(10, 12, 16, 1)?.images;
    let test = glyphs.split_off(100);
    let tasks = ImageTasks { images: glyphs };
    let model = ModelConfig {
        repr_dim: 64,
        hidden: 64,
        ..ModelConfig::regression(2, 1)
    };
    let config = TrainConfig {
        steps,
        batch_size: 8,
        adam: AdamConfig {
            learning_rate: 5e-4,
            ..AdamConfig::default()
        },
        eval_every: 100,
        eval_tasks: 16,
        ..TrainConfig::default()
    };
    let out = train(CnpParams::init(model, 0)?, &Workload::Regression(&tasks), &config)?;
    for row in &out.metrics {
        println!("step {:>5}  nll {:>8.4}  mse {:.5}", row.step, row.nll, row.mse);
    }

    let image = &test[0];
    write_pgm(&out_dir.join("truth.pgm"), image)?;
    let targets = TargetSet::new(image.coordinates())?;
    for mode in [SelectionMode::Random, SelectionMode::Ordered, SelectionMode::Active] {
        let n = 40;
        let order = select_pixels(image, n, mode, &mut ChaCha8Rng::seed_from_u64(3), Some(&out.params))?;
        let pred = predict_gaussian(&out.params, &image.context(&order[..n]), &targets)?;
        let mse = image
            .pixels
            .iter()
            .zip(pred.mu.data())
            .map(|(y, m)| (y - m).powi(2))
            .sum::<f64>()
            / image.len() as f64;
        println!("{mode:>8}: {n} pixels, mse {mse:.5}");
        let mean = Image::new(
            image.height,
            image.width,
            pred.mu.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )?;
        write_pgm(&out_dir.join(format!("{mode}_mean.pgm")), &mean)?;
    }
    println!("images in {}", out_dir.display());
    Ok(())
}
