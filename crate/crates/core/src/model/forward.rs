use ndarray::{Array2, Axis};

use super::{ModelError, ModelParams};
use crate::data::Example;

/// Everything both backward passes need, so neither re-runs the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Row-major `batch x num_categorical` embedding lookups.
    pub ids: Vec<u32>,
    /// Input to every dense layer; `inputs[0]` is `[dense | embeddings]`,
    /// `inputs[l]` for `l > 0` is the ReLU output of layer `l - 1`.
    pub inputs: Vec<Array2<f64>>,
    pub logits: Vec<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.logits.len()
    }

    pub fn num_categorical(&self) -> usize {
        if self.logits.is_empty() {
            0
        } else {
            self.ids.len() / self.logits.len()
        }
    }

    pub fn id(&self, row: usize, feature: usize) -> u32 {
        self.ids[row * self.num_categorical() + feature]
    }
}

pub fn forward(params: &ModelParams, batch: &[&Example]) -> Result<ForwardCache, ModelError> {
    let arch = params.arch();
    let b = batch.len();
    let nf = arch.num_categorical();
    let mut ids = Vec::with_capacity(b * nf);
    let mut input = Array2::<f64>::zeros((b, arch.input_dim()));
    for (i, ex) in batch.iter().enumerate() {
        if ex.dense.len() != arch.num_dense || ex.categorical.len() != nf {
            return Err(ModelError::Contract(format!(
                "example {i} has {}/{} features, model expects {}/{}",
                ex.dense.len(),
                ex.categorical.len(),
                arch.num_dense,
                nf
            )));
        }
        let mut row = input.row_mut(i);
        let row = row.as_slice_mut().expect("standard layout");
        row[..arch.num_dense].copy_from_slice(&ex.dense);
        let mut col = arch.num_dense;
        for (f, &id) in ex.categorical.iter().enumerate() {
            if id >= arch.bucket_counts[f] {
                return Err(ModelError::Contract(format!(
                    "example {i} feature {f}: id {id} out of range"
                )));
            }
            let e = params.embedding_row(f, id);
            row[col..col + e.len()].copy_from_slice(e);
            col += e.len();
            ids.push(id);
        }
    }

    let last = params.num_layers() - 1;
    let mut inputs = Vec::with_capacity(params.num_layers());
    inputs.push(input);
    let mut logits = Vec::new();
    for l in 0..=last {
        let mut z = inputs[l].dot(&params.weight(l).t());
        z += &ndarray::ArrayView1::from(params.bias(l));
        if z.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NumericOverflow(format!("layer {l}")));
        }
        if l == last {
            logits = z.index_axis(Axis(1), 0).to_vec();
        } else {
            z.mapv_inplace(|v| v.max(0.0));
            inputs.push(z);
        }
    }
    Ok(ForwardCache {
        ids,
        inputs,
        logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelArch;

    fn toy_arch() -> ModelArch {
        ModelArch {
            num_dense: 1,
            bucket_counts: vec![3],
            embedding_dims: vec![1],
            hidden: vec![2],
        }
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let p = ModelParams::zeros(&toy_arch()).unwrap();
        let ex = Example {
            dense: vec![1.5],
            categorical: vec![2],
            label: 1,
        };
        let c = forward(&p, &[&ex, &ex]).unwrap();
        assert_eq!(c.logits, vec![0.0, 0.0]);
    }

    #[test]
    fn empty_batch() {
        let p = ModelParams::init(&toy_arch(), 0).unwrap();
        let c = forward(&p, &[]).unwrap();
        assert!(c.logits.is_empty());
        assert_eq!(c.inputs[0].nrows(), 0);
        assert_eq!(c.batch_size(), 0);
    }

    #[test]
    fn hand_computed_logit() {
        // Input [x, e] with x = 2, e = emb[1] = 0.5.
        // Hidden: h0 = relu(1*x + 0*e + 0) = 2, h1 = relu(0*x - 1*e + 0.25) = 0 (pre -0.25).
        // Head: 3*h0 + 7*h1 - 1 = 5.
        let arch = toy_arch();
        let mut p = ModelParams::zeros(&arch).unwrap();
        let layout = p.layout().clone();
        let data = p.flat_mut();
        data[layout.embeddings[0] + 1] = 0.5;
        let l0 = layout.layers[0];
        data[l0.weight..l0.bias].copy_from_slice(&[1.0, 0.0, 0.0, -1.0]);
        data[l0.bias + 1] = 0.25;
        let l1 = layout.layers[1];
        data[l1.weight..l1.bias].copy_from_slice(&[3.0, 7.0]);
        data[l1.bias] = -1.0;
        let ex = Example {
            dense: vec![2.0],
            categorical: vec![1],
            label: 0,
        };
        let c = forward(&p, &[&ex]).unwrap();
        assert_eq!(c.logits, vec![5.0]);
        assert_eq!(c.inputs[1].row(0).to_vec(), vec![2.0, 0.0]);
    }

    #[test]
    fn overflow_names_layer() {
        let arch = toy_arch();
        let mut p = ModelParams::zeros(&arch).unwrap();
        let l0 = p.layout().layers[0];
        p.flat_mut()[l0.weight] = f64::MAX;
        let ex = Example {
            dense: vec![10.0],
            categorical: vec![0],
            label: 0,
        };
        match forward(&p, &[&ex]) {
            Err(ModelError::NumericOverflow(s)) => assert_eq!(s, "layer 0"),
            other => panic!("{other:?}"),
        }
    }
}
