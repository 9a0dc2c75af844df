//! Task distributions: GP curves, pixel-completion images, few-shot episodes,
//! and dataset ingestion.

mod episode;
mod glyphs;
mod gp;
pub mod idx;
mod image;
mod kernel;
mod regression;

pub use episode::{sample_episode, sample_episode_with, Dataset, Episode};
pub use glyphs::{export_pgm_dataset, glyph_prototypes, make_glyph_dataset};
pub use gp::{
    gp_sample_curve, gp_sample_curve_with, gp_sample_switching, gp_sample_switching_at, gp_sample_switching_with,
    SwitchingSample, MAX_POINTS,
};
pub use image::{
    active_order, make_image_task, make_image_task_with, pixel_coordinates, resample_targets, select_pixels, Image,
    ImageTasks, SelectionMode,
};
pub use kernel::{column, KernelFamily, KernelSpec, DEFAULT_JITTER};
pub use regression::{make_regression_task, make_regression_task_with, CurveKind, CurveTasks};

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ContextSet, TargetSet};

/// Independent seed for stream `index` under `root` (split-mix 64 finalizer).
pub fn split_seed(root: u64, index: u64) -> u64 {
    let mut z = root.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskMeta {
    Curve {
        kernel: KernelSpec,
    },
    Switching {
        kernels: (KernelSpec, KernelSpec),
        switch_point: f64,
    },
    Image {
        height: usize,
        width: usize,
        mode: SelectionMode,
        /// Row-major pixel index of each supervision row.
        pixel_order: Vec<usize>,
    },
}

/// One draw from a task distribution. The context is the first
/// `context_size` supervision pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInstance {
    pub x: Tensor,
    pub y: Tensor,
    pub context_size: usize,
    pub meta: TaskMeta,
}

impl TaskInstance {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn context(&self) -> ContextSet {
        ContextSet::new(self.x.head_rows(self.context_size), self.y.head_rows(self.context_size))
            .expect("task rows agree")
    }

    /// Every supervision input.
    pub fn targets(&self) -> TargetSet {
        TargetSet::new(self.x.clone()).expect("task has targets")
    }

    /// Every supervision pair.
    pub fn supervision(&self) -> ContextSet {
        ContextSet::new(self.x.clone(), self.y.clone()).expect("task rows agree")
    }

    pub fn with_context_size(&self, context_size: usize) -> Result<Self> {
        if context_size > self.len() {
            return Err(Error::invalid(format!(
                "context size {context_size} exceeds {} supervision points",
                self.len()
            )));
        }
        Ok(Self {
            context_size,
            ..self.clone()
        })
    }
}

/// A source of training and evaluation tasks.
pub trait TaskSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<TaskInstance>;
    fn x_dim(&self) -> usize;
    fn y_dim(&self) -> usize;
}
