use rand::seq::SliceRandom;

use super::RelationSample;
use crate::error::{Error, Result};
use crate::rng;

/// Disjoint train/validation partition of one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<RelationSample>,
    pub validation: Vec<RelationSample>,
    pub seed: u64,
}

/// Shuffles with the `split` stream of `seed` and keeps `train_ratio` of the
/// samples for training. The validation size is
/// `round((1 - train_ratio) * n)`, clamped so neither side is empty.
pub fn split_train_valid(
    samples: &[RelationSample],
    train_ratio: f64,
    seed: u64,
) -> Result<CorpusSplit> {
    if samples.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 samples to split, got {}",
            samples.len()
        )));
    }
    if !(0.0..1.0).contains(&train_ratio) || train_ratio <= 0.0 {
        return Err(Error::Config(format!("train ratio {train_ratio} outside (0, 1)")));
    }
    let n = samples.len();
    let n_valid = (((1.0 - train_ratio) * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split", &[]));
    let validation = order[..n_valid].iter().map(|&i| samples[i].clone()).collect();
    let train = order[n_valid..].iter().map(|&i| samples[i].clone()).collect();
    Ok(CorpusSplit {
        train,
        validation,
        seed,
    })
}

/// Number of training samples [`split_train_valid`] keeps out of `n`.
pub fn train_size(n: usize, train_ratio: f64) -> usize {
    n - (((1.0 - train_ratio) * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}
