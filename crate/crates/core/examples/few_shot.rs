//! Trains the classifier on glyph episodes and reports few-shot accuracy on
//! held-out glyph classes.
//!
//! cargo run --release --example few_shot [steps]

use cnpkit::autodiff::AdamConfig;
use cnpkit::model::{classify, CnpParams, ModelConfig};
use cnpkit::tasks::{make_glyph_dataset, sample_episode};
use cnpkit::train::{evaluate_classifier, train, TrainConfig, Workload};

fn main() -> cnpkit::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let glyphs = make_glyph_dataset(30, 20, 16, 1)?;
    let classes = glyphs.classes();
    let (train_set, test_set) = (glyphs.subset(&classes[..24]), glyphs.subset(&classes[24..]));
    let model = ModelConfig {
        repr_dim: 64,
        hidden: 64,
        ..ModelConfig::classifier(16 * 16, 5)
    };
    let config = TrainConfig {
        steps,
        batch_size: 8,
        adam: AdamConfig {
            learning_rate: 5e-4,
            ..AdamConfig::default()
        },
        eval_every: 200,
        eval_tasks: 32,
        ..TrainConfig::default()
    };
    let workload = Workload::Episodes {
        dataset: &train_set,
        ways: 5,
        shots: (1, 5),
        queries: 5,
    };
    let out = train(CnpParams::init(model, 0)?, &workload, &config)?;
    for row in &out.metrics {
        println!("step {:>5}  query nll {:.4}", row.step, row.nll);
    }
    for shots in [1, 5] {
        let r = evaluate_classifier(&out.params, &test_set, 5, shots, 5, 200, 11)?;
        println!(
            "5-way {shots}-shot on unseen classes: accuracy {:.3} ± {:.3}, entropy {:.3} (unseen-class queries {:.3})",
            r.accuracy,
            r.stderr,
            r.seen_entropy,
            r.unseen_entropy.unwrap_or(f64::NAN)
        );
    }

    let episode = sample_episode(&test_set, 5, 1, 1, 4)?;
    let probs = classify(&out.params, &episode.support, &episode.queries.x)?;
    for (i, label) in episode.queries.labels.iter().enumerate() {
        let row: Vec<String> = probs.row(i).iter().map(|p| format!("{p:.2}")).collect();
        println!("query of class {label}: [{}]", row.join(", "));
    }
    Ok(())
}
