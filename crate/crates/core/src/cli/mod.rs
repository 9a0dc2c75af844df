//! Command-line front end: `cnpkit <subcommand> [--config PATH] [--set section.key=value]... [--seed N]`.

pub mod config;
pub mod experiment;
pub mod report;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baseline::{fit_image_lengthscale, knn_predict};
use crate::error::{Error, Result};
use crate::io::pgm::{read_pgm, write_pgm};
use crate::io::write_atomic;
use crate::model::{checkpoint, predict_gaussian, sample_coherent, CnpParams, ModelConfig, TargetSet, Variant};
use crate::selftest;
use crate::tasks::{resample_targets, select_pixels, Image, SelectionMode};
use crate::train::{
    evaluate, evaluate_classifier, evaluate_gp, evaluate_with, heldout_seed, heldout_tasks, train_with, MetricsRow,
};
use config::{ExperimentConfig, SizeSpec};
use experiment::{Experiment, ExperimentData};
use report::{format_table, image_table, table_csv};

#[derive(Parser, Debug)]
#[command(
    name = "cnpkit",
    version,
    about = "Conditional neural processes: train, evaluate, complete, sample, classify"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// INI experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a key, `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Shorthand for `--set train.seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct ImageInput {
    /// Checkpoint; defaults to the configured run's checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// PGM image; defaults to a held-out image of the configured dataset.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Held-out image index when no `--image` is given.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub n_context: usize,
    /// Output file prefix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write checkpoint, metrics and a resolved config.
    Train(Common),
    /// Compare the CNP with GP and kNN baselines on held-out tasks.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Complete an image from a subset of its pixels.
    Complete {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: ImageInput,
        /// random | ordered | active
        #[arg(long, default_value = "random")]
        mode: SelectionMode,
        /// Render the mean on a grid this many times finer.
        #[arg(long, default_value_t = 1)]
        scale: usize,
    },
    /// Draw coherent completions from a latent model.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: ImageInput,
        #[arg(long, default_value_t = 4)]
        draws: usize,
    },
    /// Few-shot accuracy and predictive entropy on held-out classes.
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the invariant suite.
    Selftest(Common),
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for s in &common.set {
        config.apply_override(s)?;
    }
    if let Some(seed) = common.seed {
        config.set("train", "seed", &seed.to_string())?;
    }
    Ok(config)
}

/// Runs a parsed command; `Ok(false)` means a check failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(common) => cmd_train(&resolve_config(&common)?).map(|_| true),
        Command::Eval { common, checkpoint } => {
            let exp = Experiment::new(resolve_config(&common)?)?;
            print!("{}", cmd_eval(&exp, checkpoint.as_deref())?);
            Ok(true)
        }
        Command::Complete {
            common,
            input,
            mode,
            scale,
        } => {
            let exp = Experiment::new(resolve_config(&common)?)?;
            print!("{}", cmd_complete(&exp, &input, mode, scale)?);
            Ok(true)
        }
        Command::Sample { common, input, draws } => {
            let exp = Experiment::new(resolve_config(&common)?)?;
            print!("{}", cmd_sample(&exp, &input, draws)?);
            Ok(true)
        }
        Command::Classify { common, checkpoint } => {
            let exp = Experiment::new(resolve_config(&common)?)?;
            print!("{}", cmd_classify(&exp, checkpoint.as_deref())?);
            Ok(true)
        }
        Command::Selftest(common) => {
            let seed = resolve_config(&common)?.get("train", "seed")?;
            let checks = selftest::run(seed)?;
            for c in &checks {
                println!(
                    "{} {}: {:.3e} (limit {:.0e})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.limit
                );
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn print_rows(rows: &[MetricsRow]) {
    for r in rows {
        let size = r.context_size.map_or_else(|| "random".into(), |k| k.to_string());
        println!(
            "step {:>6}  context {:>6}  nll {:>9.4}  mse {:>9.5}",
            r.step, size, r.nll, r.mse
        );
    }
}

/// Trains per the configuration; returns the trained parameters.
pub fn cmd_train(config: &ExperimentConfig) -> Result<CnpParams> {
    let exp = Experiment::new(config.clone())?;
    let paths = exp.paths();
    std::fs::create_dir_all(&paths.out_dir).map_err(|e| Error::io(&paths.out_dir, e))?;
    write_atomic(&paths.snapshot, config.to_ini().as_bytes())?;
    let model = exp.model_config()?;
    let train = exp.train_config()?;
    let params = CnpParams::init(model, train.seed)?;
    println!(
        "training {} parameters for {} steps, batch {}",
        params.count(),
        train.steps,
        train.batch_size
    );
    let outcome = train_with(params, &exp.workload()?, &train, &mut |rows| print_rows(rows))?;
    println!("checkpoint: {}", paths.checkpoint.display());
    println!("metrics:    {}", paths.metrics.display());
    Ok(outcome.params)
}

fn load_checkpoint(exp: &Experiment, path: Option<&Path>) -> Result<CnpParams> {
    let path = path.map_or_else(|| exp.paths().checkpoint, Path::to_path_buf);
    checkpoint::load(&path)
}

fn check_variant(params: &CnpParams, expected: &ModelConfig) -> Result<()> {
    let got = params.config();
    let same_kind = std::mem::discriminant(&got.variant) == std::mem::discriminant(&expected.variant);
    let classifier = |c: &ModelConfig| matches!(c.variant, Variant::Classifier { .. });
    if classifier(got) != classifier(expected) || got.x_dim != expected.x_dim || (!same_kind && classifier(got)) {
        return Err(Error::invalid(format!(
            "checkpoint variant {:?} (x_dim {}) does not fit this task (expects {:?}, x_dim {})",
            got.variant, got.x_dim, expected.variant, expected.x_dim
        )));
    }
    Ok(())
}

fn eval_sizes(exp: &Experiment) -> Result<Vec<(String, Option<usize>)>> {
    let specs: Vec<SizeSpec> = exp.config.list("eval", "context_sizes")?;
    let resolved = exp.resolve_sizes(&specs);
    Ok(specs.iter().map(|s| s.label()).zip(resolved).collect())
}

/// Image GP kernel with `ℓ` fit on training images.
pub fn fit_image_kernel(exp: &Experiment) -> Result<crate::tasks::KernelSpec> {
    let c = &exp.config;
    let train = match &exp.data {
        ExperimentData::Images { train, .. } => &train.images,
        _ => return Err(Error::invalid("image GP needs image data")),
    };
    let count: usize = c.get("eval", "gp_fit_images")?;
    let fit = fit_image_lengthscale(
        &train[..count.min(train.len())],
        &c.list::<f64>("eval", "gp_lengthscales")?,
        c.get("eval", "gp_jitter")?,
        c.get("eval", "gp_fit_pixels")?,
        c.get("task", "split_seed")?,
    )?;
    Ok(fit.kernel)
}

/// Evaluation report text; also writes `eval.csv` in the run directory.
pub fn cmd_eval(exp: &Experiment, checkpoint_path: Option<&Path>) -> Result<String> {
    if let ExperimentData::Classes { .. } = exp.data {
        return cmd_classify(exp, checkpoint_path);
    }
    let params = load_checkpoint(exp, checkpoint_path)?;
    check_variant(&params, &exp.model_config()?)?;
    let c = &exp.config;
    let seed: u64 = c.get("train", "seed")?;
    let count: usize = c.get("eval", "tasks")?;
    let knn_k: usize = c.get("eval", "knn_k")?;
    let mut ks = vec![knn_k];
    ks.extend(
        c.list::<usize>("eval", "knn_sensitivity")?
            .into_iter()
            .filter(|&k| k != knn_k),
    );
    let mut out = String::new();
    let csv_path = exp.paths().out_dir.join("eval.csv");
    match &exp.data {
        ExperimentData::Curves(tasks) => {
            let held = heldout_tasks(tasks, count, heldout_seed(seed))?;
            let labelled = eval_sizes(exp)?;
            let sizes: Vec<Option<usize>> = labelled.iter().map(|(_, s)| *s).collect();
            let mut rows = vec![("CNP".to_string(), evaluate(&params, &held, &sizes)?)];
            if let Some(kernel) = exp.curve_kernel() {
                rows.push(("GP".into(), evaluate_gp(&kernel, &held, &sizes)?));
            }
            for &k in &ks {
                let metrics = evaluate_with(&held, &sizes, |task| {
                    let mu = knn_predict(&task.context(), &task.targets(), k)?;
                    Ok((mu, vec![f64::NAN; task.len()]))
                })?;
                rows.push((format!("kNN(k={k})"), metrics));
            }
            let mut csv = String::from("method,context_size,nll,mse,nll_unobserved,mse_unobserved,mean_sigma\n");
            writeln!(
                out,
                "{:<10} {:>8} {:>10} {:>10} {:>14} {:>10}",
                "method", "context", "nll", "mse", "nll_unobserved", "mean_sigma"
            )
            .expect("string write");
            for (method, metrics) in &rows {
                for (m, (label, _)) in metrics.iter().zip(&labelled) {
                    writeln!(
                        out,
                        "{method:<10} {label:>8} {:>10.4} {:>10.5} {:>14.4} {:>10.4}",
                        m.nll, m.mse, m.nll_unobserved, m.mean_sigma
                    )
                    .expect("string write");
                    writeln!(
                        csv,
                        "{method},{label},{},{},{},{},{}",
                        m.nll, m.mse, m.nll_unobserved, m.mse_unobserved, m.mean_sigma
                    )
                    .expect("string write");
                }
            }
            write_atomic(&csv_path, csv.as_bytes())?;
        }
        ExperimentData::Images { test, .. } => {
            let kernel = fit_image_kernel(exp)?;
            writeln!(
                out,
                "image GP: variance {:.4}, lengthscale {}",
                kernel.variance, kernel.lengthscale
            )
            .expect("string write");
            let images = &test[..count.min(test.len())];
            let total = images.first().map_or(1, Image::len);
            let sizes: Vec<(String, usize)> = eval_sizes(exp)?
                .into_iter()
                .map(|(l, s)| (l, s.unwrap_or(total)))
                .collect();
            let cells = image_table(&params, &kernel, images, &sizes, &ks, heldout_seed(seed))?;
            writeln!(out, "pixel-wise MSE over {} held-out images", images.len()).expect("string write");
            out.push_str(&format_table(&cells));
            write_atomic(&csv_path, table_csv(&cells).as_bytes())?;
        }
        ExperimentData::Classes { .. } => unreachable!("handled above"),
    }
    writeln!(out, "table: {}", csv_path.display()).expect("string write");
    Ok(out)
}

fn input_image(exp: &Experiment, input: &ImageInput) -> Result<Image> {
    match &input.image {
        Some(p) => read_pgm(p),
        None => {
            let test = exp.test_images()?;
            test.get(input.index).cloned().ok_or_else(|| {
                Error::invalid(format!(
                    "image index {} outside {} held-out images",
                    input.index,
                    test.len()
                ))
            })
        }
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}

/// Writes context mask, mean and σ images; returns the report text.
pub fn cmd_complete(exp: &Experiment, input: &ImageInput, mode: SelectionMode, scale: usize) -> Result<String> {
    let params = load_checkpoint(exp, input.checkpoint.as_deref())?;
    if params.config().x_dim != 2 || params.config().classes().is_some() {
        return Err(Error::invalid("image completion needs a 2-D regression checkpoint"));
    }
    let image = input_image(exp, input)?;
    if input.n_context > image.len() {
        return Err(Error::invalid(format!(
            "n_context {} exceeds {} pixels",
            input.n_context,
            image.len()
        )));
    }
    let seed: u64 = exp.config.get("train", "seed")?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let order = select_pixels(&image, input.n_context, mode, &mut rng, Some(&params))?;
    let context = image.context(&order[..input.n_context]);
    let mut mask = vec![0.5; image.len()];
    for &i in &order[..input.n_context] {
        mask[i] = image.pixels[i];
    }
    let native = predict_gaussian(&params, &context, &TargetSet::new(image.coordinates())?)?;
    let grid = resample_targets(image.height, image.width, scale)?;
    let mean = if scale == 1 {
        native.mu.clone()
    } else {
        predict_gaussian(&params, &context, &grid)?.mu
    };
    let sigma = native.sigma.data();
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let (h, w) = (image.height * scale, image.width * scale);
    let files = [
        (
            with_suffix(&input.out, "_context.pgm"),
            Image::new(image.height, image.width, mask)?,
        ),
        (
            with_suffix(&input.out, "_mean.pgm"),
            Image::new(h, w, mean.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())?,
        ),
        (
            with_suffix(&input.out, "_sigma.pgm"),
            Image::new(image.height, image.width, sigma.iter().map(|s| s / sigma_max).collect())?,
        ),
    ];
    let mut out = String::new();
    for (path, img) in &files {
        write_pgm(path, img)?;
        writeln!(out, "wrote {} ({}x{})", path.display(), img.width, img.height).expect("string write");
    }
    let abs: Vec<f64> = image
        .pixels
        .iter()
        .zip(native.mu.data())
        .map(|(y, m)| (y - m).abs())
        .collect();
    writeln!(out, "sigma scale: 255 = {sigma_max:.6}").expect("string write");
    writeln!(
        out,
        "mse {:.6}  mean |diff| {:.6}  max |diff| {:.6}",
        abs.iter().map(|d| d * d).sum::<f64>() / abs.len() as f64,
        abs.iter().sum::<f64>() / abs.len() as f64,
        abs.iter().copied().fold(0.0, f64::max)
    )
    .expect("string write");
    Ok(out)
}

/// Mean over pixels of the across-draw variance of the sampled means.
pub fn across_draw_variance(draws: &[crate::model::GaussianPrediction]) -> f64 {
    let k = draws.len() as f64;
    let m = draws[0].mu.len();
    let mut total = 0.0;
    for i in 0..m {
        let mean = draws.iter().map(|d| d.mu.data()[i]).sum::<f64>() / k;
        total += draws.iter().map(|d| (d.mu.data()[i] - mean).powi(2)).sum::<f64>() / k;
    }
    total / m as f64
}

/// Writes one mean image per coherent draw; returns the report text.
pub fn cmd_sample(exp: &Experiment, input: &ImageInput, draws: usize) -> Result<String> {
    let params = load_checkpoint(exp, input.checkpoint.as_deref())?;
    if params.config().z_dim().is_none() {
        return Err(Error::invalid(
            "sampling needs a latent checkpoint (model.variant = latent)",
        ));
    }
    let image = input_image(exp, input)?;
    let seed: u64 = exp.config.get("train", "seed")?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let order = select_pixels(&image, input.n_context, SelectionMode::Random, &mut rng, None)?;
    let context = image.context(&order[..input.n_context]);
    let samples = sample_coherent(&params, &context, &TargetSet::new(image.coordinates())?, draws, seed)?;
    let mut out = String::new();
    for (j, s) in samples.iter().enumerate() {
        let path = with_suffix(&input.out, &format!("_draw{j}.pgm"));
        let img = Image::new(
            image.height,
            image.width,
            s.mu.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )?;
        write_pgm(&path, &img)?;
        writeln!(out, "wrote {}", path.display()).expect("string write");
    }
    writeln!(
        out,
        "per-pixel variance across draws: {:.6e}",
        across_draw_variance(&samples)
    )
    .expect("string write");
    Ok(out)
}

/// Accuracy ± standard error per requested shot count on held-out classes.
pub fn cmd_classify(exp: &Experiment, checkpoint_path: Option<&Path>) -> Result<String> {
    let params = load_checkpoint(exp, checkpoint_path)?;
    let test = match &exp.data {
        ExperimentData::Classes { test, .. } => test,
        _ => return Err(Error::invalid("classification needs task.kind = classification")),
    };
    let classes = params
        .config()
        .classes()
        .ok_or_else(|| Error::invalid("checkpoint is not a classifier"))?;
    let c = &exp.config;
    let ways: usize = c.get("eval", "ways")?;
    if ways != classes {
        return Err(c.bad("eval", "ways", format!("checkpoint classifies {classes} ways")));
    }
    let seed: u64 = c.get("train", "seed")?;
    let mut out = String::new();
    for shots in c.list::<usize>("eval", "shots")? {
        let r = evaluate_classifier(
            &params,
            test,
            ways,
            shots,
            c.get("eval", "queries")?,
            c.get("eval", "episodes")?,
            heldout_seed(seed),
        )?;
        let unseen = r.unseen_entropy.map_or_else(|| "n/a".into(), |h| format!("{h:.4}"));
        writeln!(
            out,
            "{ways}-way {shots}-shot: accuracy {:.4} ± {:.4} over {} episodes; entropy seen {:.4} unseen {unseen}",
            r.accuracy, r.stderr, r.episodes, r.seen_entropy
        )
        .expect("string write");
    }
    Ok(out)
}
