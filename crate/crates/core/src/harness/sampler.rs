//! Class-weighted with-replacement sampling. Slice weights are inversely
//! proportional to slice-level class frequency so each class is drawn at
//! an expected rate of one half.

use super::TrainError;
use crate::seeding::{self, domain};
use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerPlan {
    pub weights: Vec<f64>,
    pub epoch_length: usize,
    pub with_replacement: bool,
}

/// Weight every slice by `1 / count(class of slice)`.
pub fn class_weighted_sampler(labels: &[u8]) -> Result<SamplerPlan, TrainError> {
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(TrainError::SingleClassTraining {
            positives,
            negatives,
        });
    }
    let weights = labels
        .iter()
        .map(|&y| {
            if y == 1 {
                1.0 / positives as f64
            } else {
                1.0 / negatives as f64
            }
        })
        .collect();
    Ok(SamplerPlan {
        weights,
        epoch_length: labels.len(),
        with_replacement: true,
    })
}

/// Uniform plan (weighted sampling disabled), still with replacement so
/// epoch semantics stay identical.
pub fn uniform_sampler(n: usize) -> SamplerPlan {
    SamplerPlan {
        weights: vec![1.0; n],
        epoch_length: n,
        with_replacement: true,
    }
}

/// Draw one epoch of indices for the given training-stream coordinates.
pub fn draw_epoch(plan: &SamplerPlan, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = seeding::stream(&[seed, domain::SAMPLER, epoch]);
    let dist = WeightedIndex::new(&plan.weights).expect("positive weights");
    (0..plan.epoch_length).map(|_| dist.sample(&mut rng)).collect()
}
