//! Pixel-wise image completion tasks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TaskInstance, TaskMeta, TaskSampler};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{predict_gaussian, CnpParams, ContextSet, TargetSet};

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::invalid(format!(
                "{} pixels do not fill a {height}x{width} image",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("intensity {p} outside [0, 1]")));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Coordinates of every pixel, `[H·W, 2]`.
    pub fn coordinates(&self) -> Tensor {
        pixel_coordinates(self.height, self.width)
    }

    /// Intensities as a `[H·W, 1]` column.
    pub fn values(&self) -> Tensor {
        Tensor::matrix(self.len(), 1, self.pixels.clone()).expect("image column")
    }

    /// Context set made of the listed pixels.
    pub fn context(&self, pixels: &[usize]) -> ContextSet {
        ContextSet::new(
            self.coordinates().select_rows(pixels),
            self.values().select_rows(pixels),
        )
        .expect("pixel rows agree")
    }
}

fn axis(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// `(row/(H−1), col/(W−1))` for every pixel in row-major order.
pub fn pixel_coordinates(height: usize, width: usize) -> Tensor {
    let mut data = Vec::with_capacity(height * width * 2);
    for r in 0..height {
        for c in 0..width {
            data.push(axis(r, height));
            data.push(axis(c, width));
        }
    }
    Tensor::matrix(height * width, 2, data).expect("coordinate grid")
}

/// Coordinate grid of an `(sH)×(sW)` image over the same unit square.
pub fn resample_targets(height: usize, width: usize, scale: usize) -> Result<TargetSet> {
    if scale < 1 {
        return Err(Error::invalid("scale factor must be at least 1"));
    }
    TargetSet::new(pixel_coordinates(height * scale, width * scale))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMode {
    Random,
    Ordered,
    /// Greedy maximum-σ acquisition driven by a model.
    Active,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "ordered" => Ok(Self::Ordered),
            "active" => Ok(Self::Active),
            other => Err(Error::invalid(format!(
                "unknown selection mode `{other}` (random, ordered, active)"
            ))),
        }
    }
}

impl std::fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Ordered => "ordered",
            Self::Active => "active",
        })
    }
}

/// Greedy acquisition: repeatedly predict every pixel and observe the
/// unobserved one with the largest σ, lowest row-major index on ties.
pub fn active_order(params: &CnpParams, image: &Image, n_context: usize) -> Result<Vec<usize>> {
    let targets = TargetSet::new(image.coordinates())?;
    let mut observed = vec![false; image.len()];
    let mut chosen = Vec::with_capacity(n_context);
    while chosen.len() < n_context {
        let pred = predict_gaussian(params, &image.context(&chosen), &targets)?;
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in pred.sigma.data().iter().enumerate() {
            if !observed[i] && best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (i, _) = best.expect("an unobserved pixel remains");
        observed[i] = true;
        chosen.push(i);
    }
    Ok(chosen)
}

/// Full pixel permutation whose first `n_context` entries are the context.
pub fn select_pixels<R: Rng>(
    image: &Image,
    n_context: usize,
    mode: SelectionMode,
    rng: &mut R,
    model: Option<&CnpParams>,
) -> Result<Vec<usize>> {
    let total = image.len();
    if n_context < 1 || n_context > total {
        return Err(Error::invalid(format!(
            "context size {n_context} outside 1..={total} pixels"
        )));
    }
    match mode {
        SelectionMode::Ordered => Ok((0..total).collect()),
        SelectionMode::Random => {
            let mut order: Vec<usize> = (0..total).collect();
            order.shuffle(rng);
            Ok(order)
        }
        SelectionMode::Active => {
            let params = model.ok_or_else(|| Error::invalid("active selection requires a model"))?;
            let mut order = active_order(params, image, n_context)?;
            let mut taken = vec![false; total];
            for &i in &order {
                taken[i] = true;
            }
            order.extend((0..total).filter(|&i| !taken[i]));
            Ok(order)
        }
    }
}

pub fn make_image_task(
    image: &Image,
    n_context: usize,
    mode: SelectionMode,
    seed: u64,
    model: Option<&CnpParams>,
) -> Result<TaskInstance> {
    make_image_task_with(image, n_context, mode, &mut ChaCha8Rng::seed_from_u64(seed), model)
}

/// Completion task over all pixels with the selected pixels first.
pub fn make_image_task_with<R: Rng>(
    image: &Image,
    n_context: usize,
    mode: SelectionMode,
    rng: &mut R,
    model: Option<&CnpParams>,
) -> Result<TaskInstance> {
    let order = select_pixels(image, n_context, mode, rng, model)?;
    Ok(TaskInstance {
        x: image.coordinates().select_rows(&order),
        y: image.values().select_rows(&order),
        context_size: n_context,
        meta: TaskMeta::Image {
            height: image.height,
            width: image.width,
            mode,
            pixel_order: order,
        },
    })
}

/// Training distribution over images: random pixel order, context size
/// uniform on `1..=H·W`.
#[derive(Clone, Debug)]
pub struct ImageTasks {
    pub images: Vec<Image>,
}

impl TaskSampler for ImageTasks {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<TaskInstance> {
        if self.images.is_empty() {
            return Err(Error::invalid("image task sampler has no images"));
        }
        let image = &self.images[rng.random_range(0..self.images.len())];
        let n = rng.random_range(0..image.len()) + 1;
        make_image_task_with(image, n, SelectionMode::Random, rng, None)
    }

    fn x_dim(&self) -> usize {
        2
    }

    fn y_dim(&self) -> usize {
        1
    }
}
