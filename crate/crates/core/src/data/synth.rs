use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{log_transform, DataError, Dataset, Example, Schema, TaskKind, NUM_CATEGORICAL, NUM_DENSE};
use crate::rng::{seeded, streams, Gaussian};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthLabel {
    Binary { positive_rate: f64 },
    Count { mean: f64 },
}

/// Synthetic stand-in for the proprietary conversion tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub label: SynthLabel,
    #[serde(default = "default_vocab")]
    pub vocab_sizes: Vec<u32>,
    #[serde(default = "default_num_dense")]
    pub num_dense: usize,
    /// Std of the per-bucket score weights.
    #[serde(default = "default_weight_scale")]
    pub weight_scale: f64,
    pub seed: u64,
}

fn default_vocab() -> Vec<u32> {
    vec![100; NUM_CATEGORICAL]
}

fn default_num_dense() -> usize {
    NUM_DENSE
}

fn default_weight_scale() -> f64 {
    0.3
}

impl SynthConfig {
    pub fn binary(n: usize, positive_rate: f64, seed: u64) -> Self {
        Self {
            n,
            label: SynthLabel::Binary { positive_rate },
            vocab_sizes: default_vocab(),
            num_dense: NUM_DENSE,
            weight_scale: default_weight_scale(),
            seed,
        }
    }

    pub fn count(n: usize, mean: f64, seed: u64) -> Self {
        Self {
            label: SynthLabel::Count { mean },
            ..Self::binary(n, 0.5, seed)
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        match self.label {
            SynthLabel::Binary { positive_rate: p } if !(p > 0.0 && p < 1.0) => {
                return bad(format!("positive_rate {p} must lie strictly inside (0, 1)"))
            }
            SynthLabel::Count { mean } if !(mean > 0.0 && mean.is_finite()) => {
                return bad(format!("mean count {mean} must be positive"))
            }
            _ => {}
        }
        if self.vocab_sizes.contains(&0) {
            return bad("vocabulary sizes must be positive".into());
        }
        if !(self.weight_scale >= 0.0 && self.weight_scale.is_finite()) {
            return bad(format!("weight_scale {} must be non-negative", self.weight_scale));
        }
        Ok(())
    }

    pub fn task(&self) -> TaskKind {
        match self.label {
            SynthLabel::Binary { .. } => TaskKind::Binary,
            SynthLabel::Count { .. } => TaskKind::Count,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Finds `b` with `mean(link(s + b)) = target` for an increasing `link`.
fn calibrate_offset(scores: &[f64], target: f64, link: impl Fn(f64) -> f64) -> Result<f64, DataError> {
    let mean_at = |b: f64| scores.iter().map(|s| link(s + b)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    if !(mean_at(lo) <= target && mean_at(hi) >= target) {
        return Err(DataError::Calibration(format!(
            "target {target} not bracketed by offsets [{lo}, {hi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Uniform categorical ids, Poisson dense counts and labels drawn from a fixed
/// random linear score over the one-hot features, offset-calibrated to the
/// requested positive rate or mean count.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let mut weights_rng = Gaussian::from_seed(cfg.seed, streams::SYNTH);
    let weights: Vec<Vec<f64>> = cfg
        .vocab_sizes
        .iter()
        .map(|&v| (0..v).map(|_| cfg.weight_scale * weights_rng.sample()).collect())
        .collect();

    let mut rng = seeded(cfg.seed, streams::SYNTH + 100);
    let dense_rates: Vec<Poisson<f64>> = (0..cfg.num_dense)
        .map(|_| Poisson::new(rng.random_range(0.0..4.0f64).exp()).expect("positive rate"))
        .collect();

    let mut examples = Vec::with_capacity(cfg.n);
    let mut scores = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let dense = dense_rates
            .iter()
            .map(|d| log_transform(Some(d.sample(&mut rng) as i64)))
            .collect();
        let categorical: Vec<u32> = cfg
            .vocab_sizes
            .iter()
            .map(|&v| rng.random_range(0..v))
            .collect();
        scores.push(
            categorical
                .iter()
                .zip(&weights)
                .map(|(&id, w)| w[id as usize])
                .sum::<f64>(),
        );
        examples.push(Example {
            dense,
            categorical,
            label: 0,
        });
    }

    match cfg.label {
        SynthLabel::Binary { positive_rate } => {
            let b = calibrate_offset(&scores, positive_rate, sigmoid)?;
            for (ex, s) in examples.iter_mut().zip(&scores) {
                ex.label = u32::from(rng.random::<f64>() < sigmoid(s + b));
            }
        }
        SynthLabel::Count { mean } => {
            let b = calibrate_offset(&scores, mean, f64::exp)?;
            for (ex, s) in examples.iter_mut().zip(&scores) {
                let rate = (s + b).exp();
                ex.label = Poisson::new(rate)
                    .map_err(|e| DataError::Calibration(format!("poisson rate {rate}: {e}")))?
                    .sample(&mut rng) as u32;
            }
        }
    }

    Dataset::new(
        examples,
        Schema {
            num_dense: cfg.num_dense,
            bucket_counts: cfg.vocab_sizes.clone(),
        },
        cfg.task(),
    )
}
