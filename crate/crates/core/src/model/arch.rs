use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::{embedding_dim, Schema};
use crate::rng::{seeded, streams, Gaussian};
use rand::Rng;

/// Hidden widths of the reference architecture: four ReLU layers of 598.
pub const DEFAULT_HIDDEN: [usize; 4] = [598; 4];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArch {
    pub num_dense: usize,
    pub bucket_counts: Vec<u32>,
    pub embedding_dims: Vec<usize>,
    pub hidden: Vec<usize>,
}

impl ModelArch {
    /// Embedding widths from the `int[2 V^0.25]` rule.
    pub fn for_schema(schema: &Schema, hidden: Vec<usize>) -> Self {
        Self {
            num_dense: schema.num_dense,
            bucket_counts: schema.bucket_counts.clone(),
            embedding_dims: schema.bucket_counts.iter().map(|&v| embedding_dim(v)).collect(),
            hidden,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.bucket_counts.len() != self.embedding_dims.len() {
            return Err(ModelError::InvalidArch(format!(
                "{} bucket counts but {} embedding dims",
                self.bucket_counts.len(),
                self.embedding_dims.len()
            )));
        }
        if self.bucket_counts.contains(&0) || self.embedding_dims.contains(&0) {
            return Err(ModelError::InvalidArch(
                "bucket counts and embedding dims must be positive".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(ModelError::InvalidArch("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn num_categorical(&self) -> usize {
        self.bucket_counts.len()
    }

    pub fn embedding_width(&self) -> usize {
        self.embedding_dims.iter().sum()
    }

    pub fn input_dim(&self) -> usize {
        self.num_dense + self.embedding_width()
    }

    /// `(fan_in, fan_out)` of every dense layer, head included.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_dim();
        for &h in &self.hidden {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, 1));
        dims
    }

    pub fn max_width(&self) -> usize {
        self.hidden
            .iter()
            .copied()
            .chain([self.input_dim(), 1])
            .max()
            .unwrap_or(1)
    }

    pub fn num_params(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Offsets of every tensor inside the flat parameter vector: embedding tables
/// first (row-major `V_f x d_f`), then each layer's `fan_out x fan_in` weight and its bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embeddings: Vec<usize>,
    pub layers: Vec<LayerSlot>,
    pub total: usize,
}

impl Layout {
    pub fn new(arch: &ModelArch) -> Self {
        let mut off = 0;
        let embeddings = arch
            .bucket_counts
            .iter()
            .zip(&arch.embedding_dims)
            .map(|(&v, &d)| {
                let o = off;
                off += v as usize * d;
                o
            })
            .collect();
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let slot = LayerSlot {
                    weight: off,
                    bias: off + fan_in * fan_out,
                    fan_in,
                    fan_out,
                };
                off += fan_in * fan_out + fan_out;
                slot
            })
            .collect();
        Self {
            embeddings,
            layers,
            total: off,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ModelArch,
    layout: Layout,
    data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: &ModelArch) -> Result<Self, ModelError> {
        arch.validate()?;
        let layout = Layout::new(arch);
        Ok(Self {
            arch: arch.clone(),
            data: vec![0.0; layout.total],
            layout,
        })
    }

    /// Glorot-uniform weights, zero biases, `N(0, (1/sqrt(d_f))^2)` embeddings.
    pub fn init(arch: &ModelArch, seed: u64) -> Result<Self, ModelError> {
        let mut p = Self::zeros(arch)?;
        let mut gauss = Gaussian::from_seed(seed, streams::INIT);
        for (f, &d) in arch.embedding_dims.iter().enumerate() {
            let std = 1.0 / (d as f64).sqrt();
            let off = p.layout.embeddings[f];
            let len = arch.bucket_counts[f] as usize * d;
            for v in &mut p.data[off..off + len] {
                *v = std * gauss.sample();
            }
        }
        let mut uni = seeded(seed, streams::INIT + 100);
        for slot in p.layout.layers.clone() {
            let limit = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
            for v in &mut p.data[slot.weight..slot.bias] {
                *v = uni.random_range(-limit..=limit);
            }
        }
        Ok(p)
    }

    pub fn from_flat(arch: &ModelArch, data: Vec<f64>) -> Result<Self, ModelError> {
        arch.validate()?;
        let layout = Layout::new(arch);
        if data.len() != layout.total {
            return Err(ModelError::Contract(format!(
                "{} values for {} parameters",
                data.len(),
                layout.total
            )));
        }
        Ok(Self {
            arch: arch.clone(),
            layout,
            data,
        })
    }

    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn embedding_row(&self, feature: usize, id: u32) -> &[f64] {
        let d = self.arch.embedding_dims[feature];
        let off = self.layout.embeddings[feature] + id as usize * d;
        &self.data[off..off + d]
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let s = self.layout.layers[layer];
        ArrayView2::from_shape((s.fan_out, s.fan_in), &self.data[s.weight..s.bias])
            .expect("layout matches shape")
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = self.layout.layers[layer];
        &self.data[s.bias..s.bias + s.fan_out]
    }

    pub fn num_layers(&self) -> usize {
        self.layout.layers.len()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
