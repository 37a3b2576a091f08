//! Deterministic stand-ins for a trained network, for exercising the
//! cross-validation and reporting path without training.

use rand::Rng;

use super::{FoldOutcome, FoldTrainer, PreparedSet};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Always predicts the majority class of the training part (lowest index on ties).
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstantStub;

impl FoldTrainer for ConstantStub {
    fn run_fold(&self, _fold: usize, train: &PreparedSet, test: &PreparedSet) -> Result<FoldOutcome> {
        let k = train.classes.len();
        let mut counts = vec![0usize; k];
        for &l in &train.labels {
            counts[l] += 1;
        }
        let majority = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
        let row: Vec<f64> = (0..k).map(|c| if c == majority { 1.0 } else { 0.0 }).collect();
        Ok(FoldOutcome {
            probabilities: vec![row; test.len()],
            history: None,
            model: None,
        })
    }
}

/// Looks at the true label and predicts it with probability `accuracy`,
/// otherwise a uniformly chosen wrong class. Draws depend only on
/// `(seed, sample id)`.
#[derive(Clone, Copy, Debug)]
pub struct NoisyOracleStub {
    pub accuracy: f64,
    pub seed: u64,
}

impl FoldTrainer for NoisyOracleStub {
    fn run_fold(&self, _fold: usize, _train: &PreparedSet, test: &PreparedSet) -> Result<FoldOutcome> {
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(Error::Config(format!("stub accuracy must be in [0, 1], got {}", self.accuracy)));
        }
        let k = test.classes.len();
        let probabilities = test
            .ids
            .iter()
            .zip(&test.labels)
            .map(|(id, &truth)| {
                let mut rng = rng_for(self.seed, &format!("stub/{id}"));
                let pred = if rng.random::<f64>() < self.accuracy {
                    truth
                } else {
                    (truth + rng.random_range(1..k)) % k
                };
                // A little extra mass on the prediction keeps scores graded for ROC.
                let top = 0.5 + 0.4 * rng.random::<f64>();
                (0..k)
                    .map(|c| if c == pred { top } else { (1.0 - top) / (k - 1) as f64 })
                    .collect()
            })
            .collect();
        Ok(FoldOutcome {
            probabilities,
            history: None,
            model: None,
        })
    }
}
