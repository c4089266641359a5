//! Pre-norm transformer encoder and a shared decoder that runs in causal
//! or bidirectional mode over explicitly positioned inputs.

mod config;
mod infer;
mod mask;
pub mod seq2seq;

pub use config::ModelConfig;
pub use infer::{Buffers, DecoderCache, DecoderWeights, InferenceModel};
pub use mask::{AttentionMask, MaskMode, PositionedSequence};
pub use seq2seq::{DecoderSegment, Seq2Seq};

use crate::numerics::kernels;
use crate::numerics::Scalar;

/// Sinusoidal embedding of an explicit integer position.
pub fn positional_encoding(position: usize, d_model: usize) -> Vec<f64> {
    let mut out = vec![0.0; d_model];
    kernels::sinusoid(position, &mut out);
    out
}

pub fn positional_encoding_into<T: Scalar>(position: usize, out: &mut [T]) {
    kernels::sinusoid(position, out);
}
