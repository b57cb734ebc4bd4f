//! Per-unit gradients materialized explicitly, one row per clipping unit.
//! Memory is `units x num_params`; this is the straightforward DP-SGD the
//! ghost passes avoid.

use ndarray::Array2;

use super::backward::{accumulate_gradient, units};
use super::{ForwardCache, ModelError, ModelParams};

pub fn per_unit_gradients(
    params: &ModelParams,
    cache: &ForwardCache,
    loss_grads: &[f64],
    microbatch: usize,
) -> Result<Array2<f64>, ModelError> {
    if loss_grads.len() != cache.batch_size() || microbatch == 0 {
        return Err(ModelError::Contract(format!(
            "{} loss gradients for a batch of {} (microbatch {microbatch})",
            loss_grads.len(),
            cache.batch_size()
        )));
    }
    let b = cache.batch_size();
    let mut out = Array2::zeros((b.div_ceil(microbatch), params.len()));
    for (mut row, r) in out.rows_mut().into_iter().zip(units(b, microbatch)) {
        let m = r.len() as f64;
        let scaled: Vec<f64> = loss_grads[r.clone()].iter().map(|g| g / m).collect();
        accumulate_gradient(
            params,
            cache,
            r,
            &scaled,
            row.as_slice_mut().expect("contiguous row"),
        );
    }
    Ok(out)
}

/// Clip-then-sum over materialized per-unit gradients. Returns the clipped sum
/// and the squared per-unit norms.
pub fn clipped_sum(
    per_unit: &Array2<f64>,
    clip_norm: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; per_unit.ncols()];
    let mut sq = Vec::with_capacity(per_unit.nrows());
    for row in per_unit.rows() {
        let n2: f64 = row.iter().map(|v| v * v).sum();
        sq.push(n2);
        let n = n2.sqrt();
        let w = if n > clip_norm { clip_norm / n } else { 1.0 };
        for (s, v) in sum.iter_mut().zip(row.iter()) {
            *s += w * v;
        }
    }
    (sum, sq)
}
