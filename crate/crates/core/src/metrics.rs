//! Exact AUC, Poisson log loss and relative loss increments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Example, TaskKind};
use crate::model::{forward, ModelError, ModelParams};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("AUC is undefined without both positive and negative labels")]
    UndefinedAuc,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    AucLoss,
    Pll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub split: String,
    pub kind: MetricKind,
    pub value: f64,
    pub count: usize,
}

/// Mann–Whitney AUC with average ranks for tied scores.
pub fn auc(scores: &[f64], labels: &[u32]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y > 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the positive rank sum, kept integral: a tie block spanning ranks
    // lo..=hi has average rank (lo + hi) / 2.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_avg = (i + 1 + j + 1) as u128;
        let pos_in_block = order[i..=j].iter().filter(|&&k| labels[k] > 0).count() as u128;
        twice_rank_sum += twice_avg * pos_in_block;
        i = j + 1;
    }
    let p = n_pos as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * n_pos as u128 * n_neg as u128) as f64)
}

/// `100 (L_eps - L_inf) / L_inf`.
pub fn relative_increment(private_loss: f64, baseline_loss: f64) -> Result<f64, MetricsError> {
    if !(baseline_loss > 0.0) {
        return Err(MetricsError::Contract(format!(
            "baseline loss {baseline_loss} must be positive"
        )));
    }
    Ok(100.0 * (private_loss - baseline_loss) / baseline_loss)
}

/// Mean of `exp(f) - y f`.
pub fn pll_from_logits(logits: &[f64], labels: &[u32]) -> Result<f64, MetricsError> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(MetricsError::Contract("PLL needs matching, non-empty inputs".into()));
    }
    let mut sum = 0.0;
    for (&f, &y) in logits.iter().zip(labels) {
        sum += crate::model::pll_loss(f, f64::from(y))?;
    }
    Ok(sum / logits.len() as f64)
}

const EVAL_CHUNK: usize = 4096;

/// Logits for every example, in dataset order.
pub fn predict(params: &ModelParams, examples: &[Example]) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_CHUNK) {
        let refs: Vec<&Example> = chunk.iter().collect();
        out.extend(forward(params, &refs)?.logits);
    }
    Ok(out)
}

pub fn test_pll(params: &ModelParams, ds: &Dataset) -> Result<f64, MetricsError> {
    if ds.task() != TaskKind::Count {
        return Err(MetricsError::Contract("PLL requires a count-label dataset".into()));
    }
    let logits = predict(params, ds.examples())?;
    let labels: Vec<u32> = ds.labels().collect();
    pll_from_logits(&logits, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
        assert_eq!(auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.5, 0.3], &[1, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn auc_single_class() {
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(MetricsError::UndefinedAuc)));
        assert!(matches!(auc(&[0.1], &[0]), Err(MetricsError::UndefinedAuc)));
    }

    #[test]
    fn relative_increment_values() {
        assert!((relative_increment(0.2250, 0.1943).unwrap() - 15.8).abs() <= 0.1);
        assert_eq!(relative_increment(0.3, 0.3).unwrap(), 0.0);
        assert!((relative_increment(0.3886, 0.1943).unwrap() - 100.0).abs() < 1e-12);
        assert!(relative_increment(0.1, 0.0).is_err());
    }

    #[test]
    fn pll_values() {
        assert_eq!(pll_from_logits(&[0.0; 3], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(pll_from_logits(&[0.0; 3], &[0, 5, 9]).unwrap(), 1.0);
        let v = pll_from_logits(&[-10.0], &[0]).unwrap();
        assert!((v - 4.539_992_976_248_485e-5).abs() < 1e-15);
    }

    fn pairwise_auc(s: &[f64], y: &[u32]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] == 1 && y[j] == 0 {
                    den += 1.0;
                    num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_and_antisymmetry(
            data in proptest::collection::vec((0i32..6, 0u32..2), 2..60)
        ) {
            let s: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let y: Vec<u32> = data.iter().map(|d| d.1).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let a = auc(&s, &y).unwrap();
            prop_assert!((a - pairwise_auc(&s, &y)).abs() < 1e-12);
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert!((a + auc(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
            let mono: Vec<f64> = s.iter().map(|v| (v * 0.7).exp() + 3.0).collect();
            prop_assert_eq!(a, auc(&mono, &y).unwrap());
        }

        #[test]
        fn relative_increment_linear(b in 0.01f64..1.0, l in 0.0f64..2.0, k in 0.1f64..3.0) {
            let r1 = relative_increment(l, b).unwrap();
            let r2 = relative_increment(k * l, b).unwrap();
            prop_assert!(((r2 + 100.0) - k * (r1 + 100.0)).abs() < 1e-9 * (1.0 + r2.abs()));
        }
    }
}
