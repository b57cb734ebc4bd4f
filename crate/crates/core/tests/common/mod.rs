//! Scalar reference implementation of the model's forward and backward passes.
//! Written with plain loops over the flat parameter vector so it shares no
//! code with the library's matrix kernels.

#![allow(dead_code)]

use dpads::data::Example;
use dpads::model::{LossKind, ModelParams};

pub fn dloss(kind: LossKind, f: f64, y: f64) -> f64 {
    match kind {
        LossKind::Bce => 1.0 / (1.0 + (-f).exp()) - y,
        LossKind::Pll => f.exp() - y,
    }
}

pub fn loss(kind: LossKind, f: f64, y: f64) -> f64 {
    match kind {
        LossKind::Bce => {
            let p = 1.0 / (1.0 + (-f).exp());
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }
        LossKind::Pll => f.exp() - y * f,
    }
}

/// Activations of every layer input plus the logit.
pub fn forward_one(p: &ModelParams, ex: &Example) -> (Vec<Vec<f64>>, f64) {
    let arch = p.arch();
    let layout = p.layout();
    let theta = p.flat();
    let mut x = ex.dense.clone();
    for (f, &id) in ex.categorical.iter().enumerate() {
        let d = arch.embedding_dims[f];
        let off = layout.embeddings[f] + id as usize * d;
        x.extend_from_slice(&theta[off..off + d]);
    }
    let mut acts = vec![x];
    let last = layout.layers.len() - 1;
    let mut logit = 0.0;
    for (l, slot) in layout.layers.iter().enumerate() {
        let a = &acts[l];
        let mut z = vec![0.0; slot.fan_out];
        for (o, zo) in z.iter_mut().enumerate() {
            let mut s = theta[slot.bias + o];
            for (i, ai) in a.iter().enumerate() {
                s += theta[slot.weight + o * slot.fan_in + i] * ai;
            }
            *zo = s;
        }
        if l == last {
            logit = z[0];
        } else {
            acts.push(z.into_iter().map(|v| v.max(0.0)).collect());
        }
    }
    (acts, logit)
}

/// Full gradient of one example's loss with respect to the flat parameters.
pub fn example_gradient(p: &ModelParams, ex: &Example, kind: LossKind) -> Vec<f64> {
    let arch = p.arch();
    let layout = p.layout();
    let theta = p.flat();
    let (acts, logit) = forward_one(p, ex);
    let mut grad = vec![0.0; theta.len()];
    let mut delta = vec![dloss(kind, logit, f64::from(ex.label))];
    for l in (0..layout.layers.len()).rev() {
        let slot = layout.layers[l];
        let a = &acts[l];
        for o in 0..slot.fan_out {
            grad[slot.bias + o] += delta[o];
            for i in 0..slot.fan_in {
                grad[slot.weight + o * slot.fan_in + i] += delta[o] * a[i];
            }
        }
        let mut below = vec![0.0; slot.fan_in];
        for (i, b) in below.iter_mut().enumerate() {
            let mut s = 0.0;
            for o in 0..slot.fan_out {
                s += theta[slot.weight + o * slot.fan_in + i] * delta[o];
            }
            // ReLU derivative for hidden inputs; the model input is linear.
            *b = if l == 0 || a[i] > 0.0 { s } else { 0.0 };
        }
        delta = below;
    }
    let mut col = arch.num_dense;
    for (f, &id) in ex.categorical.iter().enumerate() {
        let d = arch.embedding_dims[f];
        let off = layout.embeddings[f] + id as usize * d;
        for k in 0..d {
            grad[off + k] += delta[col + k];
        }
        col += d;
    }
    grad
}

/// Per-unit squared norms of the mean gradient and the clipped sum, computed
/// by materializing every example's gradient.
pub fn oracle_clipped_sum(
    p: &ModelParams,
    batch: &[Example],
    kind: LossKind,
    clip: f64,
    microbatch: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; p.len()];
    let mut sq_norms = Vec::new();
    for unit in batch.chunks(microbatch) {
        let mut mean = vec![0.0; p.len()];
        for ex in unit {
            for (m, g) in mean.iter_mut().zip(example_gradient(p, ex, kind)) {
                *m += g / unit.len() as f64;
            }
        }
        let sq: f64 = mean.iter().map(|v| v * v).sum();
        let w = if sq.sqrt() > clip { clip / sq.sqrt() } else { 1.0 };
        for (s, m) in sum.iter_mut().zip(&mean) {
            *s += w * m;
        }
        sq_norms.push(sq);
    }
    (sq_norms, sum)
}

pub fn mean_loss(p: &ModelParams, batch: &[Example], kind: LossKind) -> f64 {
    batch
        .iter()
        .map(|ex| loss(kind, forward_one(p, ex).1, f64::from(ex.label)))
        .sum::<f64>()
        / batch.len() as f64
}
