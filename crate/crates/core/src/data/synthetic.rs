use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Corpus, SentencePair, TokenId, Vocabulary, DEFAULT_CHUNK_SIZES};
use crate::error::{Error, Result};

/// Bijection over regular tokens plus the set of tokens that trigger a swap
/// of the adjacent pair they start.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenMapping {
    perm: Vec<u32>,
    trigger: Vec<bool>,
}

impl TokenMapping {
    pub fn identity(n_regular: usize) -> Self {
        Self {
            perm: (0..n_regular as u32).collect(),
            trigger: vec![false; n_regular],
        }
    }

    /// Random permutation; `round(swap_prob · n)` tokens become swap
    /// triggers, so a uniformly drawn pair swaps with probability `swap_prob`.
    pub fn random(n_regular: usize, swap_prob: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<u32> = (0..n_regular as u32).collect();
        perm.shuffle(&mut rng);
        let n_trig = ((swap_prob.clamp(0.0, 1.0) * n_regular as f64).round() as usize).min(n_regular);
        let mut order: Vec<usize> = (0..n_regular).collect();
        order.shuffle(&mut rng);
        let mut trigger = vec![false; n_regular];
        for &i in &order[..n_trig] {
            trigger[i] = true;
        }
        Self { perm, trigger }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Maps every token, then swaps pairs `(2j, 2j+1)` whose first source
    /// token is a trigger.
    pub fn apply(&self, source: &[TokenId], first_regular: TokenId) -> Vec<TokenId> {
        let idx = |t: TokenId| (t - first_regular) as usize;
        let mut out: Vec<TokenId> = source
            .iter()
            .map(|&t| self.perm[idx(t)] + first_regular)
            .collect();
        let mut j = 0;
        while j + 1 < source.len() {
            if self.trigger[idx(source[j])] {
                out.swap(j, j + 1);
            }
            j += 2;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SyntheticTask {
    Copy,
    Reverse,
    MappedSwap(TokenMapping),
}

impl SyntheticTask {
    pub fn mapped_swap(n_regular: usize, swap_prob: f64, map_seed: u64) -> Self {
        SyntheticTask::MappedSwap(TokenMapping::random(n_regular, swap_prob, map_seed))
    }

    pub fn target(&self, source: &[TokenId], first_regular: TokenId) -> Vec<TokenId> {
        match self {
            SyntheticTask::Copy => source.to_vec(),
            SyntheticTask::Reverse => source.iter().rev().copied().collect(),
            SyntheticTask::MappedSwap(m) => m.apply(source, first_regular),
        }
    }
}

/// Parameters for [`generate_synthetic`].
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub task: SyntheticTask,
    pub n_pairs: usize,
    pub lengths: RangeInclusive<usize>,
    /// Total vocabulary size, specials included.
    pub vocab_size: usize,
    pub chunk_sizes: Vec<usize>,
    /// Upper bound on sequence length.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            task: SyntheticTask::Copy,
            n_pairs: 50_000,
            lengths: 5..=40,
            vocab_size: 64 + 4 + DEFAULT_CHUNK_SIZES.len(),
            chunk_sizes: DEFAULT_CHUNK_SIZES.to_vec(),
            max_len: 200,
            seed: 0,
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    let n_specials = 4 + spec.chunk_sizes.len();
    if spec.vocab_size < n_specials + 2 {
        return Err(Error::VocabularyTooSmall {
            size: spec.vocab_size,
            min: n_specials + 2,
        });
    }
    let (lo, hi) = (*spec.lengths.start(), *spec.lengths.end());
    if lo < 1 || hi < lo || hi > spec.max_len {
        return Err(Error::InvalidConfig(format!(
            "length range {lo}..={hi} must lie within [1, {}]",
            spec.max_len
        )));
    }
    let vocab = Vocabulary::synthetic(spec.vocab_size - n_specials, &spec.chunk_sizes)?;
    if let SyntheticTask::MappedSwap(m) = &spec.task {
        if m.len() != vocab.num_regular() {
            return Err(Error::InvalidConfig(format!(
                "mapping covers {} tokens, vocabulary has {}",
                m.len(),
                vocab.num_regular()
            )));
        }
    }
    let first = vocab.first_regular();
    let end = vocab.len() as TokenId;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pairs = (0..spec.n_pairs)
        .map(|_| {
            let n = rng.gen_range(lo..=hi);
            let source: Vec<TokenId> = (0..n).map(|_| rng.gen_range(first..end)).collect();
            let target = spec.task.target(&source, first);
            SentencePair { source, target }
        })
        .collect();
    Ok(Corpus { pairs, vocab })
}
