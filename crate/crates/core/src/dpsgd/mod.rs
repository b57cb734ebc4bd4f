//! DP-SGD: clip each unit's gradient to norm C, sum, add N(0, σ²C²) noise,
//! divide by the expected unit count, then take an optimizer step.

mod optim;
mod train;

pub use optim::{cosine_lr, OptimizerKind, OptimizerSpec, OptimizerState};
pub use train::{
    resolve_dp, train, Horizon, NoiseLevel, Privacy, SplitData, TrainConfig, TrainOutcome, TrainRecord, TrainReport,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::AccountantError;
use crate::data::{DataError, Example};
use crate::labeldp::LabelDpError;
use crate::metrics::MetricsError;
use crate::model::{
    backward_norms, backward_weighted, forward, loss_grads, naive, GradNorms, LossKind,
    ModelError, ModelParams,
};
use crate::rng::Gaussian;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("invalid DP configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    LabelDp(#[from] LabelDpError),
}

/// Fully resolved DP-SGD parameters for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DPConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    /// Expected batch size B = qN.
    pub batch_size: usize,
    pub microbatch: usize,
    pub q: f64,
    pub steps: u64,
    pub delta: f64,
}

impl DPConfig {
    /// Derives `q = B/N` and the step count; exactly one of `steps`/`epochs`
    /// must be given, with `T = ceil(E N / B)`.
    #[allow(clippy::too_many_arguments)]
    pub fn resolve(
        clip_norm: f64,
        noise_multiplier: f64,
        batch_size: usize,
        microbatch: usize,
        n: usize,
        horizon: Horizon,
        delta: f64,
    ) -> Result<Self, DpError> {
        if n == 0 {
            return Err(DpError::InvalidConfig("empty training set".into()));
        }
        let cfg = Self {
            clip_norm,
            noise_multiplier,
            batch_size,
            microbatch,
            q: batch_size as f64 / n as f64,
            steps: horizon.steps(n, batch_size)?,
            delta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DpError> {
        let bad = |m: String| Err(DpError::InvalidConfig(m));
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip norm {} must be positive", self.clip_norm));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return bad(format!("noise multiplier {} must be finite and >= 0", self.noise_multiplier));
        }
        if self.microbatch == 0 || self.microbatch > self.batch_size {
            return bad(format!(
                "microbatch {} must be in [1, batch size {}]",
                self.microbatch, self.batch_size
            ));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return bad(format!("sampling probability {} outside (0, 1]", self.q));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} outside (0, 1)", self.delta));
        }
        Ok(())
    }

    /// m̄ = B / B_μ, the expected number of clipping units per batch.
    pub fn expected_units(&self) -> f64 {
        self.batch_size as f64 / self.microbatch as f64
    }

    /// Per-coordinate noise std on the normalized gradient, σ C B_μ / B.
    pub fn effective_noise_std(&self) -> f64 {
        self.noise_multiplier * self.clip_norm / self.expected_units()
    }
}

/// Per-step clipping summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipStats {
    pub norms: Vec<f64>,
    pub weights: Vec<f64>,
    pub clipped_fraction: f64,
}

impl ClipStats {
    fn new(norms: Vec<f64>, clip_norm: f64) -> Self {
        let weights = clip_weights(&norms, clip_norm);
        let clipped = weights.iter().filter(|&&w| w < 1.0).count();
        let clipped_fraction = if norms.is_empty() {
            0.0
        } else {
            clipped as f64 / norms.len() as f64
        };
        Self {
            norms,
            weights,
            clipped_fraction,
        }
    }
}

/// `w_u = min(1, C / ‖g_u‖)`, with `w_u = 1` for a zero gradient.
pub fn clip_weights(norms: &[f64], clip_norm: f64) -> Vec<f64> {
    norms
        .iter()
        .map(|&n| if n > clip_norm { clip_norm / n } else { 1.0 })
        .collect()
}

/// `(clipped_sum + z) / m̄` with `z ~ N(0, σ²C² I)`.
pub fn noisy_gradient(
    clipped_sum: &[f64],
    noise_multiplier: f64,
    clip_norm: f64,
    expected_units: f64,
    noise: &mut Gaussian,
) -> Vec<f64> {
    assert!(expected_units > 0.0, "expected unit count must be positive");
    let mut g = clipped_sum.to_vec();
    if noise_multiplier > 0.0 {
        noise.add_noise(&mut g, noise_multiplier * clip_norm);
    }
    for v in &mut g {
        *v /= expected_units;
    }
    g
}

/// How the per-unit clipped sum is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMethod {
    /// Two backward passes, no per-unit gradient is formed.
    Ghost,
    /// Every unit's gradient is materialized, then clipped and summed.
    Naive,
}

/// Clipped sum of per-unit mean gradients, with clipping statistics and the
/// per-example losses of the batch.
pub fn clipped_gradient_sum(
    params: &ModelParams,
    batch: &[&Example],
    loss: LossKind,
    clip_norm: f64,
    microbatch: usize,
    method: ClipMethod,
) -> Result<(Vec<f64>, ClipStats, Vec<f64>), ModelError> {
    if batch.is_empty() {
        return Ok((vec![0.0; params.len()], ClipStats::new(Vec::new(), clip_norm), Vec::new()));
    }
    let cache = forward(params, batch)?;
    let labels: Vec<u32> = batch.iter().map(|e| e.label).collect();
    let (losses, grads) = loss_grads(loss, &cache.logits, &labels)?;
    match method {
        ClipMethod::Ghost => {
            let norms: GradNorms = backward_norms(params, &cache, &grads, microbatch)?;
            let stats = ClipStats::new(norms.norms().collect(), clip_norm);
            let sum = backward_weighted(params, &cache, &grads, &stats.weights, microbatch)?;
            Ok((sum, stats, losses))
        }
        ClipMethod::Naive => {
            let per_unit = naive::per_unit_gradients(params, &cache, &grads, microbatch)?;
            let (sum, sq) = naive::clipped_sum(&per_unit, clip_norm);
            let stats = ClipStats::new(sq.iter().map(|s| s.sqrt()).collect(), clip_norm);
            Ok((sum, stats, losses))
        }
    }
}

/// Outcome of one DP-SGD step.
#[derive(Debug, Clone)]
pub struct StepStats {
    pub clip: ClipStats,
    pub losses: Vec<f64>,
}

/// One DP-SGD step on a Poisson-sampled batch: forward, per-unit norms, clip
/// weights, reweighted backward, noise, normalization by m̄, optimizer update.
/// An empty batch still takes the noise-only step.
#[allow(clippy::too_many_arguments)]
pub fn dp_step(
    params: &mut ModelParams,
    batch: &[&Example],
    loss: LossKind,
    cfg: &DPConfig,
    method: ClipMethod,
    opt: &mut OptimizerState,
    lr: f64,
    noise: &mut Gaussian,
) -> Result<StepStats, ModelError> {
    let (sum, clip, losses) =
        clipped_gradient_sum(params, batch, loss, cfg.clip_norm, cfg.microbatch, method)?;
    let g = noisy_gradient(&sum, cfg.noise_multiplier, cfg.clip_norm, cfg.expected_units(), noise);
    opt.update(params.flat_mut(), &g, lr)?;
    Ok(StepStats { clip, losses })
}

/// Plain mini-batch step on the mean loss of `batch`.
pub fn sgd_step(
    params: &mut ModelParams,
    batch: &[&Example],
    loss: LossKind,
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<Vec<f64>, ModelError> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let cache = forward(params, batch)?;
    let labels: Vec<u32> = batch.iter().map(|e| e.label).collect();
    let (losses, grads) = loss_grads(loss, &cache.logits, &labels)?;
    // One unit holding the whole batch, weight 1: the gradient of the mean loss.
    let g = backward_weighted(params, &cache, &grads, &[1.0], batch.len())?;
    opt.update(params.flat_mut(), &g, lr)?;
    Ok(losses)
}
