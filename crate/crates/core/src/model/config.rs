use serde::{Deserialize, Serialize};

use crate::data::{Vocabulary, DEFAULT_CHUNK_SIZES};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub vocab_size: usize,
    /// Maximum source/target length `L`.
    pub max_len: usize,
    pub chunk_sizes: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_ff: 256,
            n_heads: 4,
            enc_layers: 4,
            dec_layers: 1,
            vocab_size: 64 + 4 + DEFAULT_CHUNK_SIZES.len(),
            max_len: 200,
            chunk_sizes: DEFAULT_CHUNK_SIZES.to_vec(),
        }
    }
}

impl ModelConfig {
    /// Default shape sized for `vocab`.
    pub fn for_vocab(vocab: &Vocabulary) -> Self {
        Self {
            vocab_size: vocab.len(),
            chunk_sizes: vocab.chunk_sizes().to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !self.d_model.is_multiple_of(2) {
            return bad("d_model must be even for sinusoidal positions".into());
        }
        if self.d_ff == 0 || self.enc_layers == 0 {
            return bad("d_ff and enc_layers must be positive".into());
        }
        if self.dec_layers == 0 {
            return bad("dec_layers must be at least 1".into());
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        if self.chunk_sizes.iter().any(|&k| k < 2) {
            return bad("chunk sizes must be at least 2".into());
        }
        let min_vocab = 4 + self.chunk_sizes.len() + 1;
        if self.vocab_size < min_vocab {
            return Err(Error::VocabularyTooSmall {
                size: self.vocab_size,
                min: min_vocab,
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn max_chunk(&self) -> usize {
        self.chunk_sizes.iter().copied().max().unwrap_or(1)
    }

    /// One past the largest position any decoder input can take. A grid
    /// `[EOS]` may land up to `k_max` slots beyond `L`.
    pub fn num_positions(&self) -> usize {
        self.max_len + self.max_chunk() + 1
    }

    pub fn supports_chunk(&self, k: usize) -> bool {
        self.chunk_sizes.contains(&k)
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.vocab_size || vocab.chunk_sizes() != self.chunk_sizes.as_slice() {
            return Err(Error::ConfigMismatch(format!(
                "model expects vocabulary of {} with chunks {:?}, got {} with {:?}",
                self.vocab_size,
                self.chunk_sizes,
                vocab.len(),
                vocab.chunk_sizes()
            )));
        }
        Ok(())
    }
}
