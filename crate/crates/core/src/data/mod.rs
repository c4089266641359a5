//! Vocabulary, corpora and synthetic task generation.

mod corpus;
mod synthetic;
mod vocab;

pub use corpus::{truncate, Corpus, SentencePair};
pub use synthetic::{generate_synthetic, SyntheticSpec, SyntheticTask, TokenMapping};
pub use vocab::{TokenId, Vocabulary, BOS, DEFAULT_CHUNK_SIZES, EOS, MASK, PAD};
