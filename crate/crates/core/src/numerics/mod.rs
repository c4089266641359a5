//! Dense tensors, compute kernels, reverse-mode gradients and the Adam
//! optimizer.

pub mod checkpoint;
mod graph;
pub mod kernels;
mod optim;
mod param;
mod scalar;
mod tensor;

pub use graph::{AttentionLayout, Graph, Var};
pub use optim::{clip_grad_norm, Adam, AdamConfig, InverseSqrtSchedule};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::{cross_entropy_masked, multi_head_attention, scaled_dot_attention, Tensor};

/// Layer-norm variance epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;
