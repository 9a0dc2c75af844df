//! Turns a resolved configuration into data, model shape and training settings.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, SizeSpec};
use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::model::{Activation, Aggregator, ModelConfig, Variant};
use crate::tasks::idx::load_idx_dataset;
use crate::tasks::{make_glyph_dataset, CurveKind, CurveTasks, Dataset, Image, ImageTasks, KernelSpec};
use crate::train::{TrainConfig, Workload};

pub enum ExperimentData {
    Curves(CurveTasks),
    Images { train: ImageTasks, test: Vec<Image> },
    Classes { train: Dataset, test: Dataset },
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub data: ExperimentData,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunPaths {
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub log: PathBuf,
    pub snapshot: PathBuf,
}

fn kernel(c: &ExperimentConfig, lengthscale: f64) -> Result<KernelSpec> {
    let variance = c.get("task", "variance")?;
    let jitter = c.get("task", "jitter")?;
    let k = match c.raw("task", "kernel") {
        "squared_exponential" => KernelSpec::squared_exponential(variance, lengthscale),
        "exponential" => KernelSpec::exponential(variance, lengthscale),
        other => return Err(c.bad("task", "kernel", format!("unknown kernel `{other}`"))),
    };
    let k = k.with_jitter(jitter);
    k.validate().map_err(|e| c.bad("task", "kernel", e.to_string()))?;
    Ok(k)
}

/// The labelled image collection named by `[task] dataset`.
pub fn load_dataset(c: &ExperimentConfig) -> Result<Dataset> {
    match c.raw("task", "dataset") {
        "glyphs" => make_glyph_dataset(
            c.get("task", "glyph_classes")?,
            c.get("task", "glyph_per_class")?,
            c.get("task", "glyph_size")?,
            c.get("task", "glyph_seed")?,
        ),
        "idx" => {
            let (images, labels) = (c.raw("task", "idx_images"), c.raw("task", "idx_labels"));
            if images.is_empty() || labels.is_empty() {
                return Err(c.bad("task", "idx_images", "idx datasets need idx_images and idx_labels"));
            }
            load_idx_dataset(images.as_ref(), labels.as_ref())
        }
        other => Err(c.bad("task", "dataset", format!("unknown dataset `{other}`"))),
    }
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let c = &config;
        let data = match c.raw("task", "kind") {
            kind @ ("curve" | "switching") => {
                let points = c.get("task", "points")?;
                let mut tasks = if kind == "curve" {
                    CurveTasks::fixed(kernel(c, c.get("task", "lengthscale")?)?, points)
                } else {
                    let ls: Vec<f64> = c.list("task", "switch_lengthscales")?;
                    if ls.len() != 2 {
                        return Err(c.bad("task", "switch_lengthscales", "expected two lengthscales"));
                    }
                    CurveTasks::switching(kernel(c, ls[0])?, kernel(c, ls[1])?, points)
                };
                tasks.x_range = (c.get("task", "x_min")?, c.get("task", "x_max")?);
                if tasks.points < 1 {
                    return Err(c.bad("task", "points", "need at least one point"));
                }
                ExperimentData::Curves(tasks)
            }
            "image" => {
                let dataset = load_dataset(c)?;
                let held: usize = c.get("task", "test_images")?;
                if held >= dataset.len() {
                    return Err(c.bad(
                        "task",
                        "test_images",
                        format!("{held} test images leave none of {} for training", dataset.len()),
                    ));
                }
                let mut order: Vec<usize> = (0..dataset.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(c.get("task", "split_seed")?));
                let pick = |ids: &[usize]| ids.iter().map(|&i| dataset.images[i].clone()).collect::<Vec<_>>();
                ExperimentData::Images {
                    test: pick(&order[..held]),
                    train: ImageTasks {
                        images: pick(&order[held..]),
                    },
                }
            }
            "classification" => {
                let dataset = load_dataset(c)?;
                let classes = dataset.classes();
                let n_train: usize = c.get("task", "train_classes")?;
                if n_train > classes.len() {
                    return Err(c.bad(
                        "task",
                        "train_classes",
                        format!("dataset has only {} classes", classes.len()),
                    ));
                }
                ExperimentData::Classes {
                    train: dataset.subset(&classes[..n_train]),
                    test: dataset.subset(&classes[n_train..]),
                }
            }
            other => return Err(c.bad("task", "kind", format!("unknown task kind `{other}`"))),
        };
        Ok(Self { config, data })
    }

    /// Side length of the image data, if any.
    pub fn image_pixels(&self) -> Option<usize> {
        match &self.data {
            ExperimentData::Images { test, .. } => test.first().map(Image::len),
            ExperimentData::Classes { train, .. } => Some(train.height * train.width),
            ExperimentData::Curves(_) => None,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let c = &self.config;
        let (x_dim, y_dim) = match &self.data {
            ExperimentData::Curves(_) => (1, 1),
            ExperimentData::Images { .. } => (2, 1),
            ExperimentData::Classes { train, .. } => (train.height * train.width, c.get("task", "ways")?),
        };
        let variant = match (c.raw("model", "variant"), &self.data) {
            ("classifier", ExperimentData::Classes { .. }) => Variant::Classifier {
                classes: c.get("task", "ways")?,
            },
            (_, ExperimentData::Classes { .. }) | ("classifier", _) => {
                return Err(c.bad(
                    "model",
                    "variant",
                    "classifier models pair with task.kind = classification",
                ))
            }
            ("deterministic", _) => Variant::Deterministic,
            ("latent", _) => Variant::Latent {
                z_dim: c.get("model", "z_dim")?,
            },
            (other, _) => return Err(c.bad("model", "variant", format!("unknown variant `{other}`"))),
        };
        let activation = match c.raw("model", "activation") {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            other => return Err(c.bad("model", "activation", format!("unknown activation `{other}`"))),
        };
        let aggregator = match c.raw("model", "aggregator") {
            "mean" => Aggregator::Mean,
            "sum" => Aggregator::Sum,
            other => return Err(c.bad("model", "aggregator", format!("unknown aggregator `{other}`"))),
        };
        let config = ModelConfig {
            x_dim,
            y_dim,
            repr_dim: c.get("model", "repr_dim")?,
            hidden: c.get("model", "hidden")?,
            encoder_layers: c.get("model", "encoder_layers")?,
            decoder_layers: c.get("model", "decoder_layers")?,
            latent_layers: c.get("model", "latent_layers")?,
            activation,
            aggregator,
            variant,
            sigma_floor: c.get("model", "sigma_floor")?,
        };
        config
            .validate()
            .map_err(|e| c.bad("model", "variant", e.to_string()))?;
        Ok(config)
    }

    pub fn paths(&self) -> RunPaths {
        let c = &self.config;
        let out_dir = PathBuf::from(c.raw("io", "out_dir"));
        RunPaths {
            checkpoint: out_dir.join(c.raw("io", "checkpoint")),
            metrics: out_dir.join(c.raw("io", "metrics")),
            log: out_dir.join(c.raw("io", "log")),
            snapshot: out_dir.join(c.raw("io", "snapshot")),
            out_dir,
        }
    }

    /// Points per task, or shots for classification.
    fn task_total(&self) -> usize {
        match &self.data {
            ExperimentData::Curves(t) => t.points,
            ExperimentData::Images { test, .. } => test.first().map_or(1, Image::len),
            ExperimentData::Classes { .. } => usize::MAX,
        }
    }

    pub fn resolve_sizes(&self, specs: &[SizeSpec]) -> Vec<Option<usize>> {
        let total = self.task_total();
        specs.iter().map(|s| s.resolve(total)).collect()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let c = &self.config;
        let paths = self.paths();
        let clip: f64 = c.get("train", "clip_norm")?;
        let sizes: Vec<SizeSpec> = c.list("train", "eval_context_sizes")?;
        let config = TrainConfig {
            steps: c.get("train", "steps")?,
            batch_size: c.get("train", "batch_size")?,
            adam: AdamConfig {
                learning_rate: c.get("train", "learning_rate")?,
                beta1: c.get("train", "beta1")?,
                beta2: c.get("train", "beta2")?,
                epsilon: c.get("train", "epsilon")?,
            },
            seed: c.get("train", "seed")?,
            eval_every: c.get("train", "eval_every")?,
            eval_tasks: c.get("train", "eval_tasks")?,
            eval_context_sizes: self.resolve_sizes(&sizes),
            clip_norm: (clip > 0.0).then_some(clip),
            kl_warmup: c.get("train", "kl_warmup")?,
            record_wall_clock: c.get("io", "wall_clock")?,
            checkpoint_path: Some(paths.checkpoint),
            metrics_path: Some(paths.metrics),
            log_path: Some(paths.log),
        };
        config.validate().map_err(|e| c.bad("train", "steps", e.to_string()))?;
        Ok(config)
    }

    pub fn workload(&self) -> Result<Workload<'_>> {
        let c = &self.config;
        Ok(match &self.data {
            ExperimentData::Curves(t) => Workload::Regression(t),
            ExperimentData::Images { train, .. } => Workload::Regression(train),
            ExperimentData::Classes { train, .. } => Workload::Episodes {
                dataset: train,
                ways: c.get("task", "ways")?,
                shots: (c.get("task", "shots_min")?, c.get("task", "shots_max")?),
                queries: c.get("task", "queries")?,
            },
        })
    }

    /// Ground-truth kernel of fixed-kernel curve tasks.
    pub fn curve_kernel(&self) -> Option<KernelSpec> {
        match &self.data {
            ExperimentData::Curves(CurveTasks {
                kind: CurveKind::Fixed(k),
                ..
            }) => Some(*k),
            _ => None,
        }
    }

    pub fn test_images(&self) -> Result<&[Image]> {
        match &self.data {
            ExperimentData::Images { test, .. } => Ok(test),
            _ => Err(Error::invalid("experiment has no image data (task.kind = image)")),
        }
    }
}
