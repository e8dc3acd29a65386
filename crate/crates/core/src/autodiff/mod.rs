//! Minimal reverse-mode automatic differentiation over `f64` tensors.
//!
//! Values are recorded on a [`Tape`] as they are computed. The tape holds
//! exactly the primitives the seq2seq models use: 1-D convolution, dense
//! layers, layer normalization, scaled dot-product attention, head
//! splitting, embedding gathers, dropout and softmax cross-entropy, plus a
//! few elementwise helpers. [`Tape::backward`] walks the records in reverse
//! and sums gradient contributions across fan-out.

mod checkpoint;
mod mask;
mod mha;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, CheckpointError, MAGIC as CHECKPOINT_MAGIC,
};
pub use mask::AttentionMask;
pub use mha::{multi_head_attention, MhaParams};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, OPTIM_EPS, RMSPROP_RHO};
pub use params::{BoundParams, ParamStore};
pub use tape::{Gradients, Padding, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("mask error: {0}")]
    Mask(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("loss error: {0}")]
    Loss(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}
