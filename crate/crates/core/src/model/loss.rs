use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Binary cross entropy on a logit.
    Bce,
    /// Unnormalized Poisson log loss `exp(f) - y f`.
    Pll,
}

impl From<TaskKind> for LossKind {
    fn from(t: TaskKind) -> Self {
        match t {
            TaskKind::Binary => LossKind::Bce,
            TaskKind::Count => LossKind::Pll,
        }
    }
}

impl LossKind {
    pub fn loss(self, f: f64, y: f64) -> Result<f64, ModelError> {
        match self {
            LossKind::Bce => Ok(bce_loss(f, y)),
            LossKind::Pll => pll_loss(f, y),
        }
    }

    pub fn grad(self, f: f64, y: f64) -> f64 {
        match self {
            LossKind::Bce => bce_grad(f, y),
            LossKind::Pll => pll_grad(f, y),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn bce_loss(f: f64, y: f64) -> f64 {
    f.max(0.0) - y * f + (-f.abs()).exp().ln_1p()
}

pub fn bce_grad(f: f64, y: f64) -> f64 {
    sigmoid(f) - y
}

const PLL_MAX_LOGIT: f64 = 700.0;

pub fn pll_loss(f: f64, y: f64) -> Result<f64, ModelError> {
    if f > PLL_MAX_LOGIT {
        return Err(ModelError::NumericOverflow(format!("poisson loss at logit {f}")));
    }
    Ok(f.exp() - y * f)
}

pub fn pll_grad(f: f64, y: f64) -> f64 {
    f.exp() - y
}

/// Per-example losses and `dloss/dlogit`.
pub fn loss_grads(
    kind: LossKind,
    logits: &[f64],
    labels: &[u32],
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    if logits.len() != labels.len() {
        return Err(ModelError::Contract(format!(
            "{} logits for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut losses = Vec::with_capacity(logits.len());
    let mut grads = Vec::with_capacity(logits.len());
    for (&f, &y) in logits.iter().zip(labels) {
        let y = f64::from(y);
        losses.push(kind.loss(f, y)?);
        grads.push(kind.grad(f, y));
    }
    Ok((losses, grads))
}
