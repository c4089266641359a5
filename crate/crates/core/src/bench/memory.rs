//! Closed-form worst-case activation footprint of one decode.
//!
//! The figures mirror, allocation by allocation, what the decoding
//! workspace takes from its arenas, evaluated at the longest source and the
//! longest stage-I run.

use serde::Serialize;

use crate::bench::arena::footprint;
use crate::model::{Buffers, InferenceModel, ModelConfig};
use crate::numerics::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MemoryEstimate {
    /// Encoder activations.
    pub encoder: usize,
    /// One autoregressive step (AT or Skip-AT).
    pub skip_at: usize,
    /// The one-shot infill pass; zero for plain AT decoding.
    pub skip_cmlm: usize,
    /// Per-sentence state alive across phases: encoder memory,
    /// cross-attention keys/values and the double-buffered beam caches.
    pub sentence: usize,
}

impl MemoryEstimate {
    /// Capacity of the phase arena: the largest single phase.
    pub fn max_phase(&self) -> usize {
        self.encoder.max(self.skip_at).max(self.skip_cmlm)
    }

    pub fn total(&self) -> usize {
        self.sentence + self.max_phase()
    }

    /// Field-wise maximum, for a workspace serving several settings.
    pub fn max(self, o: MemoryEstimate) -> MemoryEstimate {
        MemoryEstimate {
            encoder: self.encoder.max(o.encoder),
            skip_at: self.skip_at.max(o.skip_at),
            skip_cmlm: self.skip_cmlm.max(o.skip_cmlm),
            sentence: self.sentence.max(o.sentence),
        }
    }
}

/// Autoregressive step cap: `L+1` for AT (`k = 1`), `⌈L/k⌉` otherwise.
pub fn max_steps(max_len: usize, k: usize) -> usize {
    if k <= 1 {
        max_len + 1
    } else {
        max_len.div_ceil(k)
    }
}

/// Worst-case bytes per phase for decoding sources of up to `max_len`
/// tokens with chunk size `k` (`k = 1` is plain AT with beam `b_at`).
pub fn estimate_max_bytes<T: Scalar>(
    config: &ModelConfig,
    max_len: usize,
    k: usize,
    b_at: usize,
    b_nat: usize,
) -> MemoryEstimate {
    let d = config.d_model;
    let v = config.vocab_size;
    let layers = config.dec_layers;
    let l = max_len;
    let steps = max_steps(l, k);

    let encoder = InferenceModel::<T>::encode_scratch_bytes(config, l);

    let sentence = footprint::<T>(l * d) + footprint::<T>(layers * l * 2 * d) + 2 * footprint::<T>(layers * b_at * steps * 2 * d);

    let skip_at = footprint::<T>(b_at * d)
        + Buffers::<T>::bytes(config, b_at, steps.max(l), true)
        + footprint::<T>(b_at * v)
        + footprint::<f64>(b_at * v);

    let skip_cmlm = if k <= 1 {
        0
    } else {
        let seg = k * steps;
        let rows = b_nat * seg;
        let masks = b_nat * (k - 1) * steps;
        InferenceModel::<T>::decode_segments_bytes(config, rows, seg, l)
            + footprint::<T>(masks * v)
            + footprint::<f64>(v)
    };

    MemoryEstimate {
        encoder,
        skip_at,
        skip_cmlm,
        sentence,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_ignores_beam() {
        let c = ModelConfig::default();
        let a = estimate_max_bytes::<f64>(&c, 200, 2, 1, 1);
        let b = estimate_max_bytes::<f64>(&c, 200, 2, 5, 5);
        assert_eq!(a.encoder, b.encoder);
        assert!(b.skip_at > a.skip_at && b.sentence > a.sentence);
    }

    #[test]
    fn step_caps() {
        assert_eq!(max_steps(200, 1), 201);
        assert_eq!(max_steps(200, 3), 67);
        assert_eq!(max_steps(5, 2), 3);
    }

    #[test]
    fn doubling_length_doubles_each_phase() {
        // Per-step buffers hold one row per live hypothesis and step caps
        // are `L+1` or `⌈L/k⌉`, so the check is on the part of each phase
        // that depends on `L`.
        let c = ModelConfig::default();
        for k in [1, 2, 3, 4] {
            let z = estimate_max_bytes::<f32>(&c, 0, k, 4, 2);
            for l in [12, 48, 96] {
                let a = estimate_max_bytes::<f32>(&c, l, k, 4, 2);
                let b = estimate_max_bytes::<f32>(&c, 2 * l, k, 4, 2);
                let phases = |e: &MemoryEstimate| [e.encoder, e.skip_at, e.skip_cmlm, e.sentence];
                for ((x, y), z0) in phases(&a).into_iter().zip(phases(&b)).zip(phases(&z)) {
                    assert!(y - z0 >= 2 * (x - z0), "k={k} L={l}: {x} -> {y} (base {z0})");
                }
                assert!(b.total() > a.total());
            }
        }
    }
}
