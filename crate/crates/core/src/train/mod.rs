//! Training loop, objectives and evaluation.

mod classify;
mod eval;
mod loss;

pub use classify::{evaluate_classifier, ClassifierReport};
pub use eval::{
    active_vs_random, evaluate, evaluate_gp, evaluate_with, gaussian_nll_point, heldout_tasks, score_image,
    AcquisitionCurves, EvalMetrics, ImageScores,
};
pub use loss::{classifier_loss, cnp_loss, cnp_loss_value, elbo_loss, ElboNodes};

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Adam, AdamConfig, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{checkpoint, CnpParams, Variant};
use crate::tasks::{sample_episode_with, split_seed, Dataset, TaskSampler};

/// Stream offset separating held-out evaluation seeds from training seeds.
const EVAL_STREAM: u64 = 0x00E7_A15E_ED00_0000;

/// Seed for final test-set evaluation; disjoint from training and in-run evaluation streams.
pub fn heldout_seed(seed: u64) -> u64 {
    split_seed(seed ^ EVAL_STREAM, 1)
}

/// What a run trains on.
pub enum Workload<'a> {
    /// Regression tasks; latent models use the variational bound.
    Regression(&'a dyn TaskSampler),
    /// Few-shot episodes; shots drawn uniformly from `shots.0..=shots.1`.
    Episodes {
        dataset: &'a Dataset,
        ways: usize,
        shots: (usize, usize),
        queries: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Tasks per gradient step.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Evaluate (and checkpoint) every this many steps; 0 evaluates only at
    /// the start and the end.
    pub eval_every: usize,
    pub eval_tasks: usize,
    /// Context sizes (shots for episodes) scored at each evaluation; `None`
    /// keeps each held-out task's sampled size.
    pub eval_context_sizes: Vec<Option<usize>>,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    /// Steps over which the KL weight of the latent bound ramps linearly
    /// from 0 to 1; 0 keeps the full bound throughout.
    pub kl_warmup: usize,
    /// Record elapsed seconds in the metrics; off keeps reruns byte-identical.
    pub record_wall_clock: bool,
    pub checkpoint_path: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    /// Per-step training loss (and KL for latent models) as CSV.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            eval_every: 500,
            eval_tasks: 128,
            eval_context_sizes: vec![None],
            clip_norm: None,
            kl_warmup: 0,
            record_wall_clock: false,
            checkpoint_path: None,
            metrics_path: None,
            log_path: None,
        }
    }
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub context_size: Option<usize>,
    pub nll: f64,
    pub mse: f64,
    pub wall_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub kl: Option<f64>,
}

pub struct TrainOutcome {
    pub params: CnpParams,
    pub metrics: Vec<MetricsRow>,
    pub log: Vec<StepLog>,
    pub optimizer_steps: u64,
}

pub const METRICS_HEADER: &str = "step,context_size,nll,mse,wall_s";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let size = r.context_size.map_or_else(|| "random".to_string(), |k| k.to_string());
        writeln!(out, "{},{size},{},{},{}", r.step, r.nll, r.mse, r.wall_s).expect("string write");
    }
    out
}

pub fn log_csv(log: &[StepLog]) -> String {
    let mut out = String::from("step,loss,kl\n");
    for s in log {
        let kl = s.kl.map_or_else(String::new, |k| k.to_string());
        writeln!(out, "{},{},{kl}", s.step, s.loss).expect("string write");
    }
    out
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.eval_tasks < 1 {
            return Err(Error::invalid("evaluation needs at least one task"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::invalid("clip norm must be positive"));
        }
        Ok(())
    }
}

enum Held<'a> {
    Tasks(Vec<crate::tasks::TaskInstance>),
    Episodes {
        dataset: &'a Dataset,
        ways: usize,
        shots: (usize, usize),
        queries: usize,
    },
}

fn evaluate_rows(
    params: &CnpParams,
    held: &Held,
    config: &TrainConfig,
    step: usize,
    wall_s: f64,
) -> Result<Vec<MetricsRow>> {
    match held {
        Held::Tasks(tasks) => Ok(evaluate(params, tasks, &config.eval_context_sizes)?
            .into_iter()
            .map(|m| MetricsRow {
                step,
                context_size: m.context_size,
                nll: m.nll,
                mse: m.mse,
                wall_s,
            })
            .collect()),
        Held::Episodes {
            dataset,
            ways,
            shots,
            queries,
        } => config
            .eval_context_sizes
            .iter()
            .map(|size| {
                let k = size.unwrap_or(shots.1);
                let report = evaluate_classifier(
                    params,
                    dataset,
                    *ways,
                    k,
                    *queries,
                    config.eval_tasks,
                    split_seed(config.seed ^ EVAL_STREAM, 0),
                )?;
                Ok(MetricsRow {
                    step,
                    context_size: Some(k),
                    nll: report.cross_entropy,
                    mse: report.brier,
                    wall_s,
                })
            })
            .collect(),
    }
}

/// Batch loss node and the summed KL of latent tasks.
fn batch_loss(
    g: &mut Graph,
    params: &CnpParams,
    workload: &Workload,
    batch: usize,
    kl_weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(NodeId, Vec<NodeId>, Vec<NodeId>)> {
    let bound = params.bind(g, true);
    let mut losses = Vec::with_capacity(batch);
    let mut kls = Vec::new();
    for _ in 0..batch {
        let loss = match workload {
            Workload::Regression(sampler) => {
                let task = sampler.sample(rng)?;
                match params.config().variant {
                    Variant::Latent { z_dim } => {
                        let eps: Vec<f64> = (0..z_dim).map(|_| rng.sample(StandardNormal)).collect();
                        let nodes = elbo_loss(g, &bound, params, &task, &eps)?;
                        kls.push(nodes.kl);
                        if kl_weight < 1.0 {
                            let kl = g.scale(nodes.kl, kl_weight / task.y.len() as f64)?;
                            g.add(nodes.nll, kl)?
                        } else {
                            nodes.loss
                        }
                    }
                    _ => cnp_loss(g, &bound, params, &task)?,
                }
            }
            Workload::Episodes {
                dataset,
                ways,
                shots,
                queries,
            } => {
                let k = rng.random_range(shots.0..=shots.1);
                let ep = sample_episode_with(dataset, *ways, k, *queries, rng)?;
                classifier_loss(g, &bound, params, &ep.support, &ep.queries)?
            }
        };
        losses.push(loss);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = g.add(total, l)?;
    }
    let mean = g.scale(total, 1.0 / batch as f64)?;
    Ok((mean, bound.nodes, kls))
}

fn clip(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads.iter().flat_map(|t| t.data()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.iter_mut() {
            t.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
}

fn diverged(step: usize, error: &Error, last: Option<&MetricsRow>) -> Error {
    let last = last.map_or_else(
        || "none".to_string(),
        |r| format!("step {} nll {} mse {}", r.step, r.nll, r.mse),
    );
    Error::Diverged {
        step,
        message: format!("{error}; last metrics: {last}"),
    }
}

pub fn train(params: CnpParams, workload: &Workload, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(params, workload, config, &mut |_| {})
}

/// Monte Carlo gradient descent over sampled tasks, fully determined by
/// `(params, workload, config)`. `observer` sees each evaluation's rows.
pub fn train_with(
    mut params: CnpParams,
    workload: &Workload,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&[MetricsRow]),
) -> Result<TrainOutcome> {
    config.validate()?;
    if let Workload::Episodes { shots, .. } = workload {
        if shots.0 < 1 || shots.0 > shots.1 {
            return Err(Error::invalid(format!("invalid shot range {}..={}", shots.0, shots.1)));
        }
    }
    let held = match workload {
        Workload::Regression(sampler) => {
            Held::Tasks(heldout_tasks(*sampler, config.eval_tasks, config.seed ^ EVAL_STREAM)?)
        }
        Workload::Episodes {
            dataset,
            ways,
            shots,
            queries,
        } => Held::Episodes {
            dataset,
            ways: *ways,
            shots: *shots,
            queries: *queries,
        },
    };
    let start = Instant::now();
    let wall = || {
        if config.record_wall_clock {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };
    let mut adam = Adam::new(config.adam, &params.tensors);
    let checked = |params: &CnpParams, step: usize, last: Option<&MetricsRow>| {
        evaluate_rows(params, &held, config, step, wall()).map_err(|e| match e {
            Error::NonFinite { .. } => diverged(step, &e, last),
            other => other,
        })
    };
    let mut metrics = checked(&params, 0, None)?;
    observer(&metrics);
    let mut log = Vec::with_capacity(config.steps);
    let persist = |params: &CnpParams, metrics: &[MetricsRow], log: &[StepLog]| -> Result<()> {
        if let Some(p) = &config.checkpoint_path {
            checkpoint::save(params, p)?;
        }
        if let Some(p) = &config.metrics_path {
            write_atomic(p, metrics_csv(metrics).as_bytes())?;
        }
        if let Some(p) = &config.log_path {
            write_atomic(p, log_csv(log).as_bytes())?;
        }
        Ok(())
    };
    for step in 1..=config.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(config.seed, step as u64));
        let mut g = Graph::new();
        let kl_weight = if config.kl_warmup == 0 {
            1.0
        } else {
            (step as f64 / config.kl_warmup as f64).min(1.0)
        };
        let (loss, nodes, kls) = batch_loss(&mut g, &params, workload, config.batch_size, kl_weight, &mut rng)
            .map_err(|e| match e {
                Error::NonFinite { .. } => diverged(step, &e, metrics.last()),
                other => other,
            })?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(diverged(step, &Error::NonFinite { op: "loss" }, metrics.last()));
        }
        let kl = (!kls.is_empty()).then(|| kls.iter().map(|&k| g.value(k).item()).sum::<f64>() / kls.len() as f64);
        log.push(StepLog { step, loss: value, kl });
        let mut grads = g.backward(loss)?;
        let mut grads: Vec<Tensor> = nodes
            .iter()
            .map(|&n| grads.take(n).expect("trainable leaf has a gradient"))
            .collect();
        if let Some(c) = config.clip_norm {
            clip(&mut grads, c);
        }
        adam.step(&mut params.tensors, &grads)?;
        if params.tensors.iter().any(|t| !t.all_finite()) {
            return Err(diverged(step, &Error::NonFinite { op: "adam" }, metrics.last()));
        }
        let due = config.eval_every > 0 && step % config.eval_every == 0;
        if due || step == config.steps {
            let rows = checked(&params, step, metrics.last())?;
            observer(&rows);
            metrics.extend(rows);
            persist(&params, &metrics, &log)?;
        }
    }
    Ok(TrainOutcome {
        params,
        metrics,
        log,
        optimizer_steps: adam.step_count(),
    })
}
