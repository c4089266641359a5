use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SentencePair, TokenId, BOS, EOS, MASK, PAD};
use crate::error::{Error, Result};
use crate::model::{MaskMode, PositionedSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    At,
    Cmlm,
    SkipAt,
    SkipCmlm,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::At, Task::Cmlm, Task::SkipAt, Task::SkipCmlm];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn mode(self) -> MaskMode {
        match self {
            Task::At | Task::SkipAt => MaskMode::Causal,
            Task::Cmlm | Task::SkipCmlm => MaskMode::Full,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::At => "at",
            Task::Cmlm => "cmlm",
            Task::SkipAt => "skip_at",
            Task::SkipCmlm => "skip_cmlm",
        }
    }
}

/// Where SKIP-CMLM training puts the end of the sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipCmlmLayout {
    /// `[EOS]` observed at `N+1`, the sequence ends there.
    Natural,
    /// Inputs span positions `1..=mk` exactly as stage-II decoding builds
    /// them: anchors observed at multiples of `k` (the last one `[EOS]`),
    /// masks elsewhere, with masks past `N` targeting `[EOS]`.
    #[default]
    Grid,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingSample {
    pub task: Task,
    pub source: Vec<TokenId>,
    pub input: PositionedSequence,
    /// Aligned with `input`; `[PAD]` where no target is defined.
    pub targets: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
}

impl TrainingSample {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn loss_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}

fn check_target(pair: &SentencePair) -> Result<usize> {
    if pair.target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    Ok(pair.target.len())
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::UnsupportedChunk(k));
    }
    Ok(())
}

/// `[BOS] y1..yN` at positions `0..N`, predicting `y1..yN [EOS]`.
pub fn build_at_sample(pair: &SentencePair) -> Result<TrainingSample> {
    let n = check_target(pair)?;
    let mut tokens = Vec::with_capacity(n + 1);
    tokens.push(BOS);
    tokens.extend_from_slice(&pair.target);
    let mut targets = pair.target.clone();
    targets.push(EOS);
    Ok(TrainingSample {
        task: Task::At,
        source: pair.source.clone(),
        input: PositionedSequence::contiguous(tokens, 0),
        targets,
        loss_mask: vec![true; n + 1],
    })
}

/// CMLM sample with a random mask set: the ratio is uniform on `(0, 1]`
/// and at least one token is masked.
pub fn build_cmlm_sample<R: Rng>(pair: &SentencePair, rng: &mut R) -> Result<TrainingSample> {
    let n = check_target(pair)?;
    let ratio: f64 = 1.0 - rng.gen::<f64>();
    let count = ((ratio * n as f64).ceil() as usize).clamp(1, n);
    let mut masked: Vec<usize> = sample(rng, n, count).into_iter().map(|i| i + 1).collect();
    masked.sort_unstable();
    build_cmlm_sample_masked(pair, &masked)
}

/// CMLM sample with an explicit set of masked 1-based positions.
pub fn build_cmlm_sample_masked(pair: &SentencePair, masked: &[usize]) -> Result<TrainingSample> {
    let n = check_target(pair)?;
    if masked.is_empty() || masked.iter().any(|&p| p == 0 || p > n) {
        return Err(Error::InvalidConfig(format!(
            "mask positions {masked:?} must be a nonempty subset of 1..={n}"
        )));
    }
    let mut tokens = pair.target.clone();
    tokens.push(EOS);
    let mut targets = vec![PAD; n + 1];
    let mut loss_mask = vec![false; n + 1];
    for &p in masked {
        tokens[p - 1] = MASK;
        targets[p - 1] = pair.target[p - 1];
        loss_mask[p - 1] = true;
    }
    Ok(TrainingSample {
        task: Task::Cmlm,
        source: pair.source.clone(),
        input: PositionedSequence::contiguous(tokens, 1),
        targets,
        loss_mask,
    })
}

/// Anchor positions `k, 2k, ..., mk` with `m = ⌈(N+1)/k⌉`, and the tokens
/// there: `y_p` inside the target, `[EOS]` for the last one.
pub fn skip_anchor_positions(target: &[TokenId], k: usize) -> (Vec<usize>, Vec<TokenId>) {
    let n = target.len();
    let m = (n + 1).div_ceil(k);
    let positions: Vec<usize> = (1..=m).map(|i| i * k).collect();
    let tokens = positions
        .iter()
        .map(|&p| if p <= n { target[p - 1] } else { EOS })
        .collect();
    (positions, tokens)
}

/// `[BOS_k] a1..a_{m-1}` at positions `0, k, ..., (m-1)k`, predicting
/// `a1..a_m`. `bos_k` is the vocabulary id of `[BOS_k]`.
pub fn build_skip_at_sample(pair: &SentencePair, k: usize, bos_k: TokenId) -> Result<TrainingSample> {
    check_target(pair)?;
    check_k(k)?;
    let (positions, anchors) = skip_anchor_positions(&pair.target, k);
    let m = anchors.len();
    let mut tokens = Vec::with_capacity(m);
    tokens.push(bos_k);
    tokens.extend_from_slice(&anchors[..m - 1]);
    let mut in_pos = Vec::with_capacity(m);
    in_pos.push(0);
    in_pos.extend_from_slice(&positions[..m - 1]);
    Ok(TrainingSample {
        task: Task::SkipAt,
        source: pair.source.clone(),
        input: PositionedSequence::new(tokens, in_pos)?,
        targets: anchors,
        loss_mask: vec![true; m],
    })
}

/// SKIP-CMLM sample over positions `1..=N+1`: `y_p` observed where `k | p`,
/// `[EOS]` at `N+1`, `[MASK]` (with target `y_p`) elsewhere.
pub fn build_skip_cmlm_sample(pair: &SentencePair, k: usize) -> Result<TrainingSample> {
    let n = check_target(pair)?;
    check_k(k)?;
    let mut tokens = Vec::with_capacity(n + 1);
    let mut targets = vec![PAD; n + 1];
    let mut loss_mask = vec![false; n + 1];
    for p in 1..=n {
        if p % k == 0 {
            tokens.push(pair.target[p - 1]);
        } else {
            tokens.push(MASK);
            targets[p - 1] = pair.target[p - 1];
            loss_mask[p - 1] = true;
        }
    }
    tokens.push(EOS);
    Ok(TrainingSample {
        task: Task::SkipCmlm,
        source: pair.source.clone(),
        input: PositionedSequence::contiguous(tokens, 1),
        targets,
        loss_mask,
    })
}

/// SKIP-CMLM sample in the stage-II layout: positions `1..=mk`, anchors
/// observed at multiples of `k`, masks elsewhere targeting `y_p` or `[EOS]`
/// past the end of the target.
pub fn build_skip_cmlm_grid_sample(pair: &SentencePair, k: usize) -> Result<TrainingSample> {
    let n = check_target(pair)?;
    check_k(k)?;
    let (_, anchors) = skip_anchor_positions(&pair.target, k);
    let len = anchors.len() * k;
    let mut tokens = Vec::with_capacity(len);
    let mut targets = vec![PAD; len];
    let mut loss_mask = vec![false; len];
    for p in 1..=len {
        if p % k == 0 {
            tokens.push(anchors[p / k - 1]);
        } else {
            tokens.push(MASK);
            targets[p - 1] = if p <= n { pair.target[p - 1] } else { EOS };
            loss_mask[p - 1] = true;
        }
    }
    Ok(TrainingSample {
        task: Task::SkipCmlm,
        source: pair.source.clone(),
        input: PositionedSequence::contiguous(tokens, 1),
        targets,
        loss_mask,
    })
}

pub fn build_skip_cmlm_with_layout(pair: &SentencePair, k: usize, layout: SkipCmlmLayout) -> Result<TrainingSample> {
    match layout {
        SkipCmlmLayout::Natural => build_skip_cmlm_sample(pair, k),
        SkipCmlmLayout::Grid => build_skip_cmlm_grid_sample(pair, k),
    }
}
