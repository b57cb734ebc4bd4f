use std::ops::Range;

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};

use super::{ForwardCache, ModelError, ModelParams};

/// Squared l2 norms of each clipping unit's mean gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradNorms {
    pub squared: Vec<f64>,
}

impl GradNorms {
    pub fn len(&self) -> usize {
        self.squared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.squared.is_empty()
    }

    pub fn norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.squared.iter().map(|s| s.sqrt())
    }
}

/// Consecutive chunks of `microbatch` rows; the last chunk may be short.
pub(crate) fn units(batch: usize, microbatch: usize) -> impl Iterator<Item = Range<usize>> {
    (0..batch.div_ceil(microbatch)).map(move |u| u * microbatch..((u + 1) * microbatch).min(batch))
}

fn check(cache: &ForwardCache, loss_grads: &[f64], microbatch: usize) -> Result<(), ModelError> {
    if loss_grads.len() != cache.batch_size() {
        return Err(ModelError::Contract(format!(
            "{} loss gradients for a batch of {}",
            loss_grads.len(),
            cache.batch_size()
        )));
    }
    if microbatch == 0 {
        return Err(ModelError::Contract("microbatch size must be at least 1".into()));
    }
    Ok(())
}

/// Backpropagates `out_grads` (one per row of `rows`) through the dense stack.
/// `visit(l, g)` receives the pre-activation gradient of layer `l`, top-down.
/// Returns the gradient with respect to the embedding columns of the layer-0 input.
fn propagate(
    params: &ModelParams,
    cache: &ForwardCache,
    rows: Range<usize>,
    out_grads: &[f64],
    mut visit: impl FnMut(usize, ArrayView2<'_, f64>),
) -> Array2<f64> {
    let m = rows.len();
    let mut g = Array2::from_shape_vec((m, 1), out_grads.to_vec()).expect("one grad per row");
    for l in (1..params.num_layers()).rev() {
        visit(l, g.view());
        let mut below = g.dot(&params.weight(l));
        let act = cache.inputs[l].slice(s![rows.clone(), ..]);
        ndarray::Zip::from(&mut below)
            .and(&act)
            .for_each(|gv, &a| {
                if a <= 0.0 {
                    *gv = 0.0;
                }
            });
        g = below;
    }
    visit(0, g.view());
    let nd = params.arch().num_dense;
    g.dot(&params.weight(0).slice(s![.., nd..]))
}

fn row_dot(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Pass 1 of ghost clipping. For a unit of `m` rows, the squared norm of its mean
/// gradient is `(1/m^2) sum_{i,j} (g_i.g_j)(a_i.a_j + 1)` per dense layer plus
/// `(1/m^2) sum_{i,j: same id} e_i.e_j` per embedding table. No per-example
/// gradient is formed.
pub fn backward_norms(
    params: &ModelParams,
    cache: &ForwardCache,
    loss_grads: &[f64],
    microbatch: usize,
) -> Result<GradNorms, ModelError> {
    check(cache, loss_grads, microbatch)?;
    let b = cache.batch_size();
    let unit_ranges: Vec<_> = units(b, microbatch).collect();
    let mut sq = vec![0.0; unit_ranges.len()];

    let emb_grad = propagate(params, cache, 0..b, loss_grads, |l, g| {
        let a = &cache.inputs[l];
        for (u, r) in unit_ranges.iter().enumerate() {
            let mut acc = 0.0;
            for i in r.clone() {
                let (gi, ai) = (g.row(i), a.row(i));
                acc += row_dot(gi, gi) * (row_dot(ai, ai) + 1.0);
                for j in i + 1..r.end {
                    let gg = row_dot(gi, g.row(j));
                    if gg != 0.0 {
                        acc += 2.0 * gg * (row_dot(ai, a.row(j)) + 1.0);
                    }
                }
            }
            let m = r.len() as f64;
            sq[u] += acc / (m * m);
        }
    });

    let arch = params.arch();
    let mut col = 0;
    for (f, &d) in arch.embedding_dims.iter().enumerate() {
        let e = emb_grad.slice(s![.., col..col + d]);
        for (u, r) in unit_ranges.iter().enumerate() {
            let mut acc = 0.0;
            for i in r.clone() {
                let ei = e.row(i);
                acc += row_dot(ei, ei);
                let id = cache.id(i, f);
                for j in i + 1..r.end {
                    if cache.id(j, f) == id {
                        acc += 2.0 * row_dot(ei, e.row(j));
                    }
                }
            }
            let m = r.len() as f64;
            sq[u] += acc / (m * m);
        }
        col += d;
    }
    Ok(GradNorms { squared: sq })
}

/// Adds the gradient of `sum_{i in rows} scaled[i - rows.start] * f(x_i)` into `grad`.
pub(crate) fn accumulate_gradient(
    params: &ModelParams,
    cache: &ForwardCache,
    rows: Range<usize>,
    scaled: &[f64],
    grad: &mut [f64],
) {
    let layout = params.layout().clone();
    let emb_grad = propagate(params, cache, rows.clone(), scaled, |l, g| {
        let slot = layout.layers[l];
        let a = cache.inputs[l].slice(s![rows.clone(), ..]);
        let dw = g.t().dot(&a);
        for (dst, v) in grad[slot.weight..slot.bias].iter_mut().zip(dw.iter()) {
            *dst += v;
        }
        let db = g.sum_axis(Axis(0));
        for (dst, v) in grad[slot.bias..slot.bias + slot.fan_out].iter_mut().zip(db.iter()) {
            *dst += v;
        }
    });
    let arch = params.arch();
    let mut col = 0;
    for (f, &d) in arch.embedding_dims.iter().enumerate() {
        let base = layout.embeddings[f];
        for (k, i) in rows.clone().enumerate() {
            let off = base + cache.id(i, f) as usize * d;
            let src = emb_grad.slice(s![k, col..col + d]);
            for (dst, v) in grad[off..off + d].iter_mut().zip(src.iter()) {
                *dst += v;
            }
        }
        col += d;
    }
}

/// Pass 2 of ghost clipping: `sum_u w_u * mean_{i in u} grad l_i`, computed as one
/// ordinary backward pass on the loss reweighted by `w_u / m_u`.
pub fn backward_weighted(
    params: &ModelParams,
    cache: &ForwardCache,
    loss_grads: &[f64],
    unit_weights: &[f64],
    microbatch: usize,
) -> Result<Vec<f64>, ModelError> {
    check(cache, loss_grads, microbatch)?;
    let b = cache.batch_size();
    let n_units = b.div_ceil(microbatch);
    if unit_weights.len() != n_units {
        return Err(ModelError::Contract(format!(
            "{} unit weights for {n_units} clipping units",
            unit_weights.len()
        )));
    }
    let mut scaled = vec![0.0; b];
    for (r, &w) in units(b, microbatch).zip(unit_weights) {
        let m = r.len() as f64;
        for i in r {
            scaled[i] = loss_grads[i] * w / m;
        }
    }
    let mut grad = vec![0.0; params.len()];
    if b > 0 {
        accumulate_gradient(params, cache, 0..b, &scaled, &mut grad);
    }
    Ok(grad)
}
