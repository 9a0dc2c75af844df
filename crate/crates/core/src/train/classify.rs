//! Few-shot accuracy and predictive entropy on sampled episodes.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{classify, CnpParams};
use crate::tasks::{sample_episode_with, split_seed, Dataset};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierReport {
    pub ways: usize,
    pub shots: usize,
    pub episodes: usize,
    pub accuracy: f64,
    /// Standard error of the per-episode accuracy.
    pub stderr: f64,
    /// Mean predictive entropy (nats) of queries from the support classes.
    pub seen_entropy: f64,
    /// Mean entropy of queries from a class absent from the support set;
    /// `None` when the dataset has no spare class.
    pub unseen_entropy: Option<f64>,
    /// Mean squared distance between probabilities and one-hot labels.
    pub brier: f64,
    pub cross_entropy: f64,
}

fn entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

pub fn evaluate_classifier(
    params: &CnpParams,
    dataset: &Dataset,
    ways: usize,
    shots: usize,
    queries: usize,
    episodes: usize,
    seed: u64,
) -> Result<ClassifierReport> {
    if episodes == 0 || queries == 0 {
        return Err(Error::invalid("evaluation needs episodes and queries"));
    }
    let by_class = dataset.by_class();
    let mut accuracies = Vec::with_capacity(episodes);
    let (mut seen_h, mut seen_n, mut unseen_h, mut unseen_n) = (0.0, 0usize, 0.0, 0usize);
    let (mut brier, mut ce) = (0.0, 0.0);
    for e in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, e as u64));
        let episode = sample_episode_with(dataset, ways, shots, queries, &mut rng)?;
        let spare: Vec<usize> = by_class
            .iter()
            .filter(|(c, m)| !episode.classes.contains(c) && m.len() >= queries)
            .map(|(&c, _)| c)
            .collect();
        let mut rows = episode.queries.x.clone();
        let mut extra = 0;
        if !spare.is_empty() {
            let class = spare[rng.random_range(0..spare.len())];
            let members = &by_class[&class];
            let picked: Vec<usize> = index::sample(&mut rng, members.len(), queries)
                .into_iter()
                .map(|i| members[i])
                .collect();
            let unseen = dataset.rows(&picked);
            let mut data = rows.into_data();
            data.extend_from_slice(unseen.data());
            rows = Tensor::matrix(data.len() / unseen.cols(), unseen.cols(), data)?;
            extra = picked.len();
        }
        let probs = classify(params, &episode.support, &rows)?;
        let seen = episode.queries.labels.len();
        let mut correct = 0;
        for (i, &label) in episode.queries.labels.iter().enumerate() {
            let row = probs.row(i);
            let argmax = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            correct += usize::from(argmax == label);
            seen_h += entropy(row);
            seen_n += 1;
            ce -= row[label].max(f64::MIN_POSITIVE).ln();
            brier += row
                .iter()
                .enumerate()
                .map(|(c, p)| {
                    let t = if c == label { 1.0 } else { 0.0 };
                    (p - t) * (p - t)
                })
                .sum::<f64>();
        }
        for i in seen..seen + extra {
            unseen_h += entropy(probs.row(i));
            unseen_n += 1;
        }
        accuracies.push(correct as f64 / seen as f64);
    }
    let n = accuracies.len() as f64;
    let accuracy = accuracies.iter().sum::<f64>() / n;
    let var = accuracies.iter().map(|a| (a - accuracy).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(ClassifierReport {
        ways,
        shots,
        episodes,
        accuracy,
        stderr: (var / n).sqrt(),
        seen_entropy: seen_h / seen_n as f64,
        unseen_entropy: (unseen_n > 0).then(|| unseen_h / unseen_n as f64),
        brier: brier / seen_n as f64,
        cross_entropy: ce / seen_n as f64,
    })
}
