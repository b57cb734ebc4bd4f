//! Label privacy through binary randomized response, applied once before training.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, TaskKind};
use crate::rng::{seeded, streams};

/// Larger label epsilons are treated as this value; the flip probability is then 0 in f64.
pub const MAX_LABEL_EPSILON: f64 = 50.0;

#[derive(Debug, Error)]
pub enum LabelDpError {
    #[error("randomized response needs binary labels")]
    TaskMismatch,
    #[error("label epsilon {0} must be finite and positive")]
    InvalidEpsilon(f64),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RRConfig {
    pub epsilon: f64,
    pub seed: u64,
}

impl RRConfig {
    pub fn validate(&self) -> Result<(), LabelDpError> {
        if !(self.epsilon > 0.0) || self.epsilon.is_nan() {
            return Err(LabelDpError::InvalidEpsilon(self.epsilon));
        }
        Ok(())
    }

    fn capped(&self) -> f64 {
        self.epsilon.min(MAX_LABEL_EPSILON)
    }

    /// `e^eps / (1 + e^eps)`.
    pub fn keep_probability(&self) -> f64 {
        let e = self.capped().exp();
        e / (1.0 + e)
    }

    /// `1 / (1 + e^eps)`.
    pub fn flip_probability(&self) -> f64 {
        1.0 / (1.0 + self.capped().exp())
    }

    /// `[[P(out=0|in=0), P(out=1|in=0)], [P(out=0|in=1), P(out=1|in=1)]]`.
    pub fn transition_matrix(&self) -> [[f64; 2]; 2] {
        let (k, f) = (self.keep_probability(), self.flip_probability());
        [[k, f], [f, k]]
    }
}

pub fn randomize_labels(ds: &Dataset, cfg: &RRConfig) -> Result<Dataset, LabelDpError> {
    cfg.validate()?;
    if ds.task() != TaskKind::Binary {
        return Err(LabelDpError::TaskMismatch);
    }
    let flip = cfg.flip_probability();
    let mut rng = seeded(cfg.seed, streams::LABELS);
    let labels = ds
        .labels()
        .map(|y| if rng.random::<f64>() < flip { 1 - y } else { y })
        .collect();
    Ok(ds.with_labels(labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Example, Schema};

    fn zeros(n: usize, task: TaskKind) -> Dataset {
        let ex = Example {
            dense: vec![],
            categorical: vec![0],
            label: 0,
        };
        Dataset::new(
            vec![ex; n],
            Schema {
                num_dense: 0,
                bucket_counts: vec![1],
            },
            task,
        )
        .unwrap()
    }

    #[test]
    fn ln3_keeps_three_quarters() {
        let c = RRConfig {
            epsilon: 3f64.ln(),
            seed: 0,
        };
        assert!((c.keep_probability() - 0.75).abs() <= f64::EPSILON);
    }

    #[test]
    fn saturation() {
        let c = RRConfig {
            epsilon: 1e6,
            seed: 0,
        };
        assert!(c.flip_probability() < 1e-9);
        let out = randomize_labels(&zeros(10_000, TaskKind::Binary), &c).unwrap();
        assert_eq!(out.labels().sum::<u32>(), 0);
    }

    #[test]
    fn rejects_count_labels_and_bad_eps() {
        let c = RRConfig { epsilon: 1.0, seed: 0 };
        assert!(matches!(
            randomize_labels(&zeros(3, TaskKind::Count), &c),
            Err(LabelDpError::TaskMismatch)
        ));
        for eps in [0.0, -1.0, f64::NAN] {
            let c = RRConfig { epsilon: eps, seed: 0 };
            assert!(randomize_labels(&zeros(3, TaskKind::Binary), &c).is_err());
        }
    }

    #[test]
    fn deterministic_and_features_untouched() {
        let ds = zeros(1000, TaskKind::Binary);
        let c = RRConfig { epsilon: 1.0, seed: 4 };
        let a = randomize_labels(&ds, &c).unwrap();
        assert_eq!(a, randomize_labels(&ds, &c).unwrap());
        for (x, y) in a.examples().iter().zip(ds.examples()) {
            assert_eq!(x.dense, y.dense);
            assert_eq!(x.categorical, y.categorical);
        }
    }

    #[test]
    fn repeated_application_flips_at_least_min() {
        for (e1, e2) in [(0.5, 2.0), (1.0, 1.0), (3.0, 0.1)] {
            let p1 = RRConfig { epsilon: e1, seed: 0 }.flip_probability();
            let p2 = RRConfig { epsilon: e2, seed: 0 }.flip_probability();
            let composed = p1 * (1.0 - p2) + p2 * (1.0 - p1);
            assert!(composed >= p1.min(p2));
        }
    }
}
