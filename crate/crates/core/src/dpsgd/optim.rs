use serde::{Deserialize, Serialize};

use crate::model::ModelError;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;
const ADAMW_DECAY: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdamW,
    Adagrad,
    Yogi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// SGD only.
    #[serde(default)]
    pub momentum: f64,
    /// AdamW only; defaults to 0.01.
    #[serde(default = "default_decay")]
    pub weight_decay: f64,
}

fn default_decay() -> f64 {
    ADAMW_DECAY
}

impl OptimizerSpec {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            momentum,
            weight_decay: ADAMW_DECAY,
        }
    }

    pub fn of(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            momentum: 0.0,
            weight_decay: ADAMW_DECAY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    spec: OptimizerSpec,
    /// Momentum buffer or first moment.
    m: Vec<f64>,
    /// Second moment or Adagrad accumulator.
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(spec: &OptimizerSpec, num_params: usize) -> Self {
        let needs_m = !matches!(spec.kind, OptimizerKind::Adagrad);
        let needs_v = !matches!(spec.kind, OptimizerKind::Sgd);
        Self {
            spec: *spec,
            m: if needs_m { vec![0.0; num_params] } else { Vec::new() },
            v: if needs_v { vec![0.0; num_params] } else { Vec::new() },
            t: 0,
        }
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, theta: &mut [f64], g: &[f64], lr: f64) -> Result<(), ModelError> {
        if theta.len() != g.len() {
            return Err(ModelError::Contract(format!(
                "{} gradient entries for {} parameters",
                g.len(),
                theta.len()
            )));
        }
        let expected = if matches!(self.spec.kind, OptimizerKind::Adagrad) {
            self.v.len()
        } else {
            self.m.len()
        };
        if expected != theta.len() {
            return Err(ModelError::Contract("optimizer state does not match parameters".into()));
        }
        self.t += 1;
        match self.spec.kind {
            OptimizerKind::Sgd => {
                let mu = self.spec.momentum;
                for ((p, m), &gi) in theta.iter_mut().zip(&mut self.m).zip(g) {
                    *m = mu * *m + gi;
                    *p -= lr * *m;
                }
            }
            OptimizerKind::Adagrad => {
                for ((p, v), &gi) in theta.iter_mut().zip(&mut self.v).zip(g) {
                    *v += gi * gi;
                    *p -= lr * gi / (v.sqrt() + EPS);
                }
            }
            kind => {
                let t = self.t as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                let decay = if kind == OptimizerKind::AdamW {
                    self.spec.weight_decay
                } else {
                    0.0
                };
                for (((p, m), v), &gi) in theta.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(g) {
                    let g2 = gi * gi;
                    *m = BETA1 * *m + (1.0 - BETA1) * gi;
                    if kind == OptimizerKind::Yogi {
                        *v -= (1.0 - BETA2) * sign(*v - g2) * g2;
                    } else {
                        *v = BETA2 * *v + (1.0 - BETA2) * g2;
                    }
                    let step = (*m / c1) / ((*v / c2).sqrt() + EPS);
                    *p -= lr * (step + decay * *p);
                }
            }
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `base (1 + cos(pi t / T)) / 2`; `base` when `T = 0`.
pub fn cosine_lr(base: f64, t: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = t.min(total) as f64 / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}
