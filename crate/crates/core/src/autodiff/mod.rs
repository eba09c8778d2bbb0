//! Dense tensors with reverse-mode differentiation and an Adam optimizer.

mod adam;
mod gemm;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::{trunc_normal, Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
