//! INI-style experiment configuration with a fixed key schema.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// `(section, key, default, description)` for every accepted key.
pub const SCHEMA: &[(&str, &str, &str, &str)] = &[
    (
        "model",
        "variant",
        "deterministic",
        "deterministic | latent | classifier",
    ),
    ("model", "repr_dim", "128", "representation width d"),
    ("model", "hidden", "128", "hidden width of every MLP"),
    ("model", "encoder_layers", "3", "linear layers in the encoder"),
    ("model", "decoder_layers", "5", "linear layers in the decoder"),
    ("model", "latent_layers", "3", "linear layers in the latent network"),
    ("model", "z_dim", "64", "latent width (latent variant)"),
    ("model", "activation", "relu", "relu | tanh"),
    ("model", "aggregator", "mean", "mean | sum"),
    ("model", "sigma_floor", "0.01", "added to softplus scales"),
    ("task", "kind", "curve", "curve | switching | image | classification"),
    (
        "task",
        "kernel",
        "squared_exponential",
        "squared_exponential | exponential",
    ),
    ("task", "variance", "1.0", "kernel signal variance"),
    ("task", "lengthscale", "0.4", "kernel lengthscale (curve)"),
    (
        "task",
        "switch_lengthscales",
        "0.6,0.15",
        "lengthscales either side of the switch",
    ),
    ("task", "jitter", "1e-6", "diagonal jitter for sampling"),
    ("task", "points", "50", "supervision points per curve"),
    ("task", "x_min", "-2", "input range start"),
    ("task", "x_max", "2", "input range end"),
    ("task", "dataset", "glyphs", "glyphs | idx"),
    ("task", "idx_images", "", "IDX image file (dataset = idx)"),
    ("task", "idx_labels", "", "IDX label file (dataset = idx)"),
    ("task", "glyph_classes", "80", "procedural glyph classes"),
    ("task", "glyph_per_class", "30", "examples per glyph class"),
    ("task", "glyph_size", "28", "glyph side in pixels"),
    ("task", "glyph_seed", "1", "glyph generator seed"),
    ("task", "test_images", "200", "images held out for image evaluation"),
    ("task", "split_seed", "7", "seed of the train/test image split"),
    (
        "task",
        "train_classes",
        "64",
        "classes used for classifier training; the rest are held out",
    ),
    ("task", "ways", "5", "classes per training episode"),
    ("task", "shots_min", "1", "fewest support examples per class"),
    ("task", "shots_max", "5", "most support examples per class"),
    ("task", "queries", "5", "query examples per class"),
    ("train", "steps", "20000", "gradient steps"),
    ("train", "batch_size", "16", "tasks per step"),
    ("train", "learning_rate", "1e-4", "Adam step size"),
    ("train", "beta1", "0.9", "Adam first-moment decay"),
    ("train", "beta2", "0.999", "Adam second-moment decay"),
    ("train", "epsilon", "1e-8", "Adam denominator offset"),
    ("train", "seed", "0", "initialization and task seed"),
    ("train", "clip_norm", "0", "global gradient-norm clip, 0 disables"),
    (
        "train",
        "kl_warmup",
        "0",
        "steps of linear KL-weight warm-up (latent variant)",
    ),
    ("train", "eval_every", "500", "steps between evaluations"),
    ("train", "eval_tasks", "128", "held-out tasks per evaluation"),
    (
        "train",
        "eval_context_sizes",
        "random",
        "context sizes scored during training",
    ),
    (
        "eval",
        "context_sizes",
        "10,100,full",
        "sizes: counts, percentages like 90%, full, random",
    ),
    ("eval", "tasks", "200", "held-out tasks or images"),
    ("eval", "knn_k", "1", "neighbours for the kNN baseline"),
    ("eval", "knn_sensitivity", "1,3,5", "extra k values reported"),
    (
        "eval",
        "gp_lengthscales",
        "0.02,0.03,0.05,0.075,0.1,0.15,0.2",
        "image GP lengthscale grid",
    ),
    ("eval", "gp_jitter", "1e-4", "image GP jitter"),
    ("eval", "gp_fit_images", "8", "training images for the lengthscale fit"),
    (
        "eval",
        "gp_fit_pixels",
        "400",
        "pixels per image for the lengthscale fit",
    ),
    ("eval", "ways", "5", "classes per evaluation episode"),
    ("eval", "shots", "1,5", "support sizes reported"),
    ("eval", "queries", "5", "queries per class"),
    ("eval", "episodes", "1000", "evaluation episodes"),
    ("io", "out_dir", "runs/default", "output directory"),
    ("io", "checkpoint", "model.cnpk", "checkpoint file name"),
    ("io", "metrics", "metrics.csv", "metrics file name"),
    ("io", "log", "train_log.csv", "per-step loss file name"),
    (
        "io",
        "snapshot",
        "config.resolved.ini",
        "resolved configuration file name",
    ),
    ("io", "wall_clock", "false", "record elapsed seconds in metrics"),
];

/// Resolved key/value document: every schema key present.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentConfig {
    values: BTreeMap<(String, String), String>,
}

fn schema_has(section: &str, key: &str) -> bool {
    SCHEMA.iter().any(|(s, k, _, _)| *s == section && *k == key)
}

fn unknown(section: &str, key: &str) -> Error {
    Error::Config {
        section: section.into(),
        key: key.into(),
        message: "unknown key".into(),
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            values: SCHEMA
                .iter()
                .map(|(s, k, d, _)| ((s.to_string(), k.to_string()), d.to_string()))
                .collect(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults overlaid with an INI document.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut section: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SCHEMA.iter().any(|(s, ..)| *s == name) {
                    return Err(Error::Config {
                        section: name.into(),
                        key: String::new(),
                        message: format!("unknown section on line {}", lineno + 1),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                section: section.clone().unwrap_or_default(),
                key: line.into(),
                message: format!("line {} is not `key = value`", lineno + 1),
            })?;
            let sec = section.as_deref().ok_or_else(|| Error::Config {
                section: String::new(),
                key: key.trim().into(),
                message: format!("line {} precedes any section header", lineno + 1),
            })?;
            config.set(sec, key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        if !schema_has(section, key) {
            return Err(unknown(section, key));
        }
        self.values.insert((section.into(), key.into()), value.into());
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override `{assignment}` is not section.key=value")))?;
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| Error::invalid(format!("override key `{path}` is not section.key")))?;
        self.set(section.trim(), key.trim(), value.trim())
    }

    pub fn raw(&self, section: &str, key: &str) -> &str {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
            .unwrap_or_else(|| panic!("schema key {section}.{key}"))
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(section, key);
        raw.parse().map_err(|e: T::Err| Error::Config {
            section: section.into(),
            key: key.into(),
            message: format!("cannot parse `{raw}`: {e}"),
        })
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(section, key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: T::Err| Error::Config {
                    section: section.into(),
                    key: key.into(),
                    message: format!("cannot parse `{s}`: {e}"),
                })
            })
            .collect()
    }

    pub fn bad(&self, section: &str, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            section: section.into(),
            key: key.into(),
            message: message.into(),
        }
    }

    /// Every key in schema order, one section block each.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key, _, doc) in SCHEMA {
            if *section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                writeln!(out, "[{section}]").expect("string write");
                current = section;
            }
            writeln!(out, "# {doc}").expect("string write");
            writeln!(out, "{key} = {}", self.raw(section, key)).expect("string write");
        }
        out
    }
}

/// A context-size request in evaluation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SizeSpec {
    Count(usize),
    Fraction(f64),
    Full,
    Random,
}

impl FromStr for SizeSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Self::Full),
            "random" => Ok(Self::Random),
            _ => {
                if let Some(p) = s.strip_suffix('%') {
                    let v: f64 = p.parse().map_err(|_| format!("bad percentage `{s}`"))?;
                    if !(v > 0.0 && v <= 100.0) {
                        return Err(format!("percentage `{s}` outside (0, 100]"));
                    }
                    Ok(Self::Fraction(v / 100.0))
                } else {
                    s.parse()
                        .map(Self::Count)
                        .map_err(|_| format!("bad context size `{s}`"))
                }
            }
        }
    }
}

impl SizeSpec {
    /// Concrete size for tasks of `total` points; `None` for random.
    pub fn resolve(self, total: usize) -> Option<usize> {
        match self {
            Self::Count(k) => Some(k.min(total)),
            Self::Fraction(f) => Some(((f * total as f64).ceil() as usize).clamp(1, total)),
            Self::Full => Some(total),
            Self::Random => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            Self::Count(k) => k.to_string(),
            Self::Fraction(f) => format!("{}%", f * 100.0),
            Self::Full => "full".into(),
            Self::Random => "random".into(),
        }
    }
}
