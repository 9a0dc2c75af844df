//! Comparison tables shared by the eval command and the experiment scripts.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baseline::{gp_posterior_mean, knn_predict};
use crate::error::Result;
use crate::model::{predict_gaussian, CnpParams, TargetSet};
use crate::tasks::{split_seed, Image, KernelSpec, SelectionMode};

/// One cell of a method × (context size, selection mode) table.
#[derive(Clone, Debug, PartialEq)]
pub struct TableCell {
    pub method: String,
    pub mode: SelectionMode,
    pub size_label: String,
    pub context_size: usize,
    pub mse: f64,
}

fn mse(image: &Image, mu: &[f64]) -> f64 {
    image.pixels.iter().zip(mu).map(|(y, m)| (y - m) * (y - m)).sum::<f64>() / image.len() as f64
}

/// Full-image MSE of kNN (one row per `k`), GP and CNP on the same contexts.
/// Random contexts use per-image seed streams, so every method sees the
/// same pixels.
pub fn image_table(
    params: &CnpParams,
    kernel: &KernelSpec,
    images: &[Image],
    sizes: &[(String, usize)],
    knn_ks: &[usize],
    seed: u64,
) -> Result<Vec<TableCell>> {
    let mut cells = Vec::new();
    for (label, size) in sizes {
        for mode in [SelectionMode::Random, SelectionMode::Ordered] {
            let mut knn = vec![0.0; knn_ks.len()];
            let (mut gp, mut cnp) = (0.0, 0.0);
            for (i, image) in images.iter().enumerate() {
                let size = (*size).clamp(1, image.len());
                let mut order: Vec<usize> = (0..image.len()).collect();
                if mode == SelectionMode::Random {
                    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed(seed, i as u64)));
                }
                let context = image.context(&order[..size]);
                let targets = TargetSet::new(image.coordinates())?;
                for (acc, &k) in knn.iter_mut().zip(knn_ks) {
                    *acc += mse(image, &knn_predict(&context, &targets, k)?);
                }
                gp += mse(image, &gp_posterior_mean(kernel, &context, &targets)?);
                cnp += mse(image, predict_gaussian(params, &context, &targets)?.mu.data());
            }
            let n = images.len() as f64;
            let mut push = |method: String, total: f64| {
                cells.push(TableCell {
                    method,
                    mode,
                    size_label: label.clone(),
                    context_size: *size,
                    mse: total / n,
                })
            };
            for (&k, total) in knn_ks.iter().zip(knn) {
                push(format!("kNN(k={k})"), total);
            }
            push("GP".into(), gp);
            push("CNP".into(), cnp);
        }
    }
    Ok(cells)
}

pub fn lookup<'a>(cells: &'a [TableCell], method: &str, mode: SelectionMode, label: &str) -> Option<&'a TableCell> {
    cells
        .iter()
        .find(|c| c.method == method && c.mode == mode && c.size_label == label)
}

/// Rows are methods, columns are `size/mode` pairs.
pub fn format_table(cells: &[TableCell]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    let mut columns: Vec<(&str, SelectionMode)> = Vec::new();
    for c in cells {
        if !methods.contains(&c.method.as_str()) {
            methods.push(&c.method);
        }
        if !columns.contains(&(c.size_label.as_str(), c.mode)) {
            columns.push((&c.size_label, c.mode));
        }
    }
    let mut out = format!("{:<10}", "method");
    for (label, mode) in &columns {
        write!(out, " {:>14}", format!("{label}/{mode}")).expect("string write");
    }
    out.push('\n');
    for m in methods {
        write!(out, "{m:<10}").expect("string write");
        for (label, mode) in &columns {
            match lookup(cells, m, *mode, label) {
                Some(c) => write!(out, " {:>14.5}", c.mse),
                None => write!(out, " {:>14}", "-"),
            }
            .expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn table_csv(cells: &[TableCell]) -> String {
    let mut out = String::from("method,mode,context_label,context_size,mse\n");
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{}",
            c.method, c.mode, c.size_label, c.context_size, c.mse
        )
        .expect("string write");
    }
    out
}
