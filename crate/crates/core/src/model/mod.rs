//! Embedding + ReLU MLP with a scalar head, and the two backward passes used by
//! ghost clipping: per-unit gradient norms from layer inputs and pre-activation
//! gradients, then a reweighted ordinary backward pass.

mod arch;
mod backward;
mod checkpoint;
mod forward;
mod loss;
pub mod naive;

pub use arch::{LayerSlot, Layout, ModelArch, ModelParams, DEFAULT_HIDDEN};
pub use backward::{backward_norms, backward_weighted, GradNorms};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry};
pub use forward::{forward, ForwardCache};
pub use loss::{bce_grad, bce_loss, loss_grads, pll_grad, pll_loss, sigmoid, LossKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite value in {0}")]
    NumericOverflow(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
