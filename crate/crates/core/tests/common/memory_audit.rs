//! Arena high-water marks against the closed-form estimate over many
//! random decodes.

use hrt::bench::Phase;
use hrt::data::TokenId;
use hrt::decoding::{DecodeMode, DecodeOptions, Workspace};
use hrt::model::{InferenceModel, ModelConfig, Seq2Seq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::alloc_audit::count_allocations;

pub struct AuditReport {
    pub decodes: usize,
    /// `(phase, high-water bytes, estimate bytes)`.
    pub peaks: Vec<(Phase, usize, usize)>,
    /// Heap allocations made inside `translate_into`; only meaningful when
    /// the counting allocator is installed.
    pub heap_allocations: usize,
    pub max_steps_seen: usize,
    pub max_output_len: usize,
}

/// `decodes` random AT/HRT decodes of sources up to `L = max_len` tokens
/// on one reused workspace.
pub fn audit(config: &ModelConfig, model_seed: u64, decodes: usize, seed: u64) -> AuditReport {
    let model = InferenceModel::<f32>::from_model(&Seq2Seq::new(config.clone(), model_seed).unwrap());
    let (b_at, b_nat) = (4, 2);
    let mut ws = Workspace::new(config, b_at, b_nat).unwrap();
    let est = ws.estimate();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = 4 + config.chunk_sizes.len() as TokenId;
    let mut out = Vec::with_capacity(config.max_len + 1);
    let mut src = Vec::with_capacity(config.max_len);
    let mut heap = 0;
    let mut max_steps_seen = 0;
    let mut max_output_len = 0;
    for i in 0..decodes {
        let n = if i % 10 == 0 { config.max_len } else { rng.gen_range(1..=config.max_len) };
        src.clear();
        src.extend((0..n).map(|_| rng.gen_range(first..config.vocab_size as TokenId)));
        let mode = match rng.gen_range(0..=config.chunk_sizes.len()) {
            0 => DecodeMode::At,
            j => DecodeMode::Hrt { k: config.chunk_sizes[j - 1] },
        };
        let bn = rng.gen_range(1..=b_nat);
        let opts = DecodeOptions {
            mode,
            b_at: rng.gen_range(bn..=b_at),
            b_nat: bn,
            length_penalty: 0.6,
            max_len: None,
        };
        let (stats, allocs) = count_allocations(|| ws.translate_into(&model, &src, &opts, &mut out).unwrap());
        heap += allocs;
        let cap = match mode {
            DecodeMode::At => config.max_len + 1,
            DecodeMode::Hrt { k } => config.max_len.div_ceil(k),
        };
        assert!(stats.stage1_steps <= cap);
        max_steps_seen = max_steps_seen.max(stats.stage1_steps);
        max_output_len = max_output_len.max(out.len());
    }
    let scratch = ws.phase_arena();
    let peaks = vec![
        (Phase::Encoder, scratch.phase_peak(Phase::Encoder), est.encoder),
        (Phase::SkipAt, scratch.phase_peak(Phase::SkipAt), est.skip_at),
        (Phase::SkipCmlm, scratch.phase_peak(Phase::SkipCmlm), est.skip_cmlm),
        (Phase::Sentence, ws.state_arena().high_water(), est.sentence),
    ];
    AuditReport {
        decodes,
        peaks,
        heap_allocations: heap,
        max_steps_seen,
        max_output_len,
    }
}
