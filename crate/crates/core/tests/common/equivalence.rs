//! Step-by-step against one-shot causal decoding.

use hrt::data::TokenId;
use hrt::model::{DecoderCache, InferenceModel, MaskMode, ModelConfig, PositionedSequence, Seq2Seq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_config() -> ModelConfig {
    ModelConfig {
        d_model: 32,
        d_ff: 64,
        n_heads: 4,
        enc_layers: 2,
        dec_layers: 2,
        vocab_size: 20,
        max_len: 24,
        chunk_sizes: vec![2, 3, 4],
    }
}

/// A freshly initialized model with every parameter perturbed, so layer
/// norms and biases are not at their identity values.
pub fn jittered_model(config: ModelConfig, seed: u64) -> Seq2Seq {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Seq2Seq::new(config, seed).unwrap();
    for p in m.params_mut().iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    m
}

/// Largest logit difference between feeding each prefix token by token
/// (occasionally several at once) and decoding it in one causal pass, over
/// `prefixes` random prefixes with strides 1 to 4.
pub fn incremental_vs_parallel(prefixes: usize, seed: u64) -> f64 {
    let config = small_config();
    let model = InferenceModel::<f64>::from_model(&jittered_model(config.clone(), seed));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let first = 4 + config.chunk_sizes.len() as TokenId;
    let mut worst: f64 = 0.0;
    for _ in 0..prefixes {
        let src: Vec<TokenId> = (0..rng.gen_range(1..=config.max_len))
            .map(|_| rng.gen_range(first..config.vocab_size as TokenId))
            .collect();
        let memory = model.encode(&src).unwrap();
        let stride = rng.gen_range(1..=4);
        let len = rng.gen_range(1..=config.max_len / stride + 1);
        let mut tokens = vec![rng.gen_range(1..first)];
        tokens.extend((1..len).map(|_| rng.gen_range(first..config.vocab_size as TokenId)));
        let positions: Vec<usize> = (0..len).map(|i| i * stride).collect();
        let full = PositionedSequence::new(tokens.clone(), positions.clone()).unwrap();
        let parallel = model.decode_parallel(&full, &memory, MaskMode::Causal).unwrap();

        let mut cache = DecoderCache::new(&model, &memory).unwrap();
        let mut i = 0;
        while i < len {
            let step = if rng.gen_bool(0.2) { rng.gen_range(1..=3).min(len - i) } else { 1 };
            let chunk = PositionedSequence::new(tokens[i..i + step].to_vec(), positions[i..i + step].to_vec()).unwrap();
            let logits = cache.decode_incremental(&chunk).unwrap();
            for r in 0..step {
                for (a, b) in logits.row(r).iter().zip(parallel.row(i + r)) {
                    worst = worst.max((a - b).abs());
                }
            }
            i += step;
        }
    }
    worst
}
