//! Labelled image collections and few-shot episodes.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::Image;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::LabelledSet;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let (height, width) = images.first().map_or((0, 0), |i| (i.height, i.width));
        if images.iter().any(|i| i.height != height || i.width != width) {
            return Err(Error::invalid("dataset images differ in size"));
        }
        Ok(Self {
            height,
            width,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Example indices per class, classes ascending.
    pub fn by_class(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        map
    }

    pub fn classes(&self) -> Vec<usize> {
        self.by_class().into_keys().collect()
    }

    /// Examples whose class is in `classes`, original labels kept.
    pub fn subset(&self, classes: &[usize]) -> Dataset {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        Dataset {
            height: self.height,
            width: self.width,
            images: keep.iter().map(|&i| self.images[i].clone()).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Rows of flattened pixels for the listed examples.
    pub fn rows(&self, examples: &[usize]) -> Tensor {
        let p = self.height * self.width;
        let mut data = Vec::with_capacity(examples.len() * p);
        for &i in examples {
            data.extend_from_slice(&self.images[i].pixels);
        }
        Tensor::matrix(examples.len(), p, data).expect("dataset rows")
    }
}

/// Few-shot task: `classes[l]` is the dataset class behind episode label `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub classes: Vec<usize>,
    pub support: LabelledSet,
    pub queries: LabelledSet,
}

pub fn sample_episode(dataset: &Dataset, ways: usize, shots: usize, queries: usize, seed: u64) -> Result<Episode> {
    sample_episode_with(dataset, ways, shots, queries, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `ways` distinct classes in random label order, each with `shots` support
/// and `queries` disjoint query examples.
pub fn sample_episode_with<R: Rng>(
    dataset: &Dataset,
    ways: usize,
    shots: usize,
    queries: usize,
    rng: &mut R,
) -> Result<Episode> {
    if ways < 1 || shots < 1 {
        return Err(Error::invalid("episodes need at least one class and one shot"));
    }
    let by_class = dataset.by_class();
    if by_class.len() < ways {
        return Err(Error::invalid(format!(
            "{ways}-way episode from a dataset with {} classes",
            by_class.len()
        )));
    }
    let needed = shots + queries;
    let all: Vec<usize> = by_class.keys().copied().collect();
    let mut picked: Vec<usize> = index::sample(rng, all.len(), ways)
        .into_iter()
        .map(|i| all[i])
        .collect();
    picked.shuffle(rng);
    let (mut support, mut support_labels, mut query, mut query_labels) = (vec![], vec![], vec![], vec![]);
    for (label, class) in picked.iter().enumerate() {
        let members = &by_class[class];
        if members.len() < needed {
            return Err(Error::InsufficientExamples {
                class: *class,
                available: members.len(),
                needed,
            });
        }
        let chosen = index::sample(rng, members.len(), needed).into_vec();
        for (j, &m) in chosen.iter().enumerate() {
            if j < shots {
                support.push(members[m]);
                support_labels.push(label);
            } else {
                query.push(members[m]);
                query_labels.push(label);
            }
        }
    }
    Ok(Episode {
        classes: picked,
        support: LabelledSet {
            x: dataset.rows(&support),
            labels: support_labels,
        },
        queries: LabelledSet {
            x: dataset.rows(&query),
            labels: query_labels,
        },
    })
}
