//! Autoregressive beam search and the two-stage hybrid decode: Skip-AT
//! anchors at every k-th position, then a single bidirectional pass that
//! fills the gaps.

mod workspace;

use std::time::Duration;

use serde::Serialize;

pub use workspace::{Candidate, Finished, Workspace};

use crate::data::{TokenId, EOS, MASK};
use crate::error::{Error, Result};
use crate::model::{InferenceModel, MaskMode, PositionedSequence};
use crate::numerics::{kernels, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DecodeMode {
    At,
    Hrt { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecodeOptions {
    pub mode: DecodeMode,
    /// Beam for AT decoding and for the Skip-AT stage.
    pub b_at: usize,
    /// Stage-I survivors passed to the infill pass.
    pub b_nat: usize,
    pub length_penalty: f64,
    /// Length cap `L`; defaults to the model's.
    pub max_len: Option<usize>,
}

impl DecodeOptions {
    pub fn at(beam: usize) -> Self {
        Self {
            mode: DecodeMode::At,
            b_at: beam,
            b_nat: 1,
            length_penalty: 0.6,
            max_len: None,
        }
    }

    pub fn hrt(k: usize, b_at: usize, b_nat: usize) -> Self {
        Self {
            mode: DecodeMode::Hrt { k },
            b_at,
            b_nat,
            length_penalty: 0.6,
            max_len: None,
        }
    }
}

/// Everything about a decode except the tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct DecodeStats {
    /// Raw log-probability of the chosen autoregressive hypothesis.
    pub skip_at_score: f64,
    /// Sum of infill log-probabilities (zero for AT).
    pub skip_cmlm_score: f64,
    /// Length-normalized score used for the final choice.
    pub score: f64,
    pub decoder_calls: usize,
    pub stage1_steps: usize,
    /// Anchors `m` of the chosen HRT candidate, `[EOS]` included.
    pub anchors: usize,
    pub forced_finish: bool,
    #[serde(serialize_with = "ser_secs")]
    pub wall_time: Duration,
}

fn ser_secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub tokens: Vec<TokenId>,
    pub stats: DecodeStats,
}

/// A finished stage-I hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// `z_1..z_m`, ending in `[EOS]`.
    pub anchors: Vec<TokenId>,
    /// `k, 2k, ..., mk`.
    pub positions: Vec<usize>,
    pub score: f64,
    pub forced: bool,
}

impl Hypothesis {
    pub fn finished(&self) -> bool {
        self.anchors.last() == Some(&EOS)
    }
}

/// Decodes one sentence with a fresh workspace.
pub fn translate<T: Scalar>(model: &InferenceModel<T>, source: &[TokenId], opts: &DecodeOptions) -> Result<Translation> {
    let mut ws = Workspace::new(model.config(), opts.b_at.max(1), opts.b_nat.max(1).min(opts.b_at.max(1)))?;
    let mut tokens = Vec::new();
    let stats = ws.translate_into(model, source, opts, &mut tokens)?;
    Ok(Translation { tokens, stats })
}

/// Standard beam search from `[BOS]`, ranked by `score / len^α`.
pub fn at_translate<T: Scalar>(
    model: &InferenceModel<T>,
    source: &[TokenId],
    beam: usize,
    length_penalty: f64,
    max_len: Option<usize>,
) -> Result<Translation> {
    let opts = DecodeOptions {
        length_penalty,
        max_len,
        ..DecodeOptions::at(beam)
    };
    translate(model, source, &opts)
}

/// Two-stage hybrid decode.
pub fn hrt_translate<T: Scalar>(
    model: &InferenceModel<T>,
    source: &[TokenId],
    k: usize,
    b_at: usize,
    b_nat: usize,
    length_penalty: f64,
) -> Result<Translation> {
    if b_nat < 1 || b_at < b_nat {
        return Err(Error::BeamOrder { b_at, b_nat });
    }
    let opts = DecodeOptions {
        length_penalty,
        ..DecodeOptions::hrt(k, b_at, b_nat)
    };
    translate(model, source, &opts)
}

/// Runs the Skip-AT stage alone and returns its finished hypotheses (best
/// raw score first) and the number of decoder calls. `max_len` sets `L`,
/// so the step cap is `⌈L/k⌉`.
pub fn skip_at_stage<T: Scalar>(
    model: &InferenceModel<T>,
    source: &[TokenId],
    k: usize,
    b_at: usize,
    max_len: Option<usize>,
) -> Result<(Vec<Hypothesis>, usize)> {
    let opts = DecodeOptions {
        max_len,
        ..DecodeOptions::hrt(k, b_at, 1)
    };
    let mut ws = Workspace::new(model.config(), b_at, 1)?;
    let steps = ws.stage_one(model, source, &opts)?;
    let mut hyps: Vec<Hypothesis> = ws
        .finished()
        .iter()
        .map(|f| {
            let anchors = ws.finished_tokens(f).to_vec();
            Hypothesis {
                positions: (1..=anchors.len()).map(|i| i * k).collect(),
                anchors,
                score: f.score,
                forced: f.forced,
            }
        })
        .collect();
    hyps.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok((hyps, steps))
}

/// Stage-II input: `k-1` masks before every anchor, positions `1..=km`.
pub fn build_stage2_input(z: &[TokenId], k: usize) -> Result<PositionedSequence> {
    if z.is_empty() || z.last() != Some(&EOS) {
        return Err(Error::InvalidConfig("anchors must be nonempty and end with [EOS]".into()));
    }
    if k == 0 {
        return Err(Error::UnsupportedChunk(k));
    }
    let mut tokens = Vec::with_capacity(k * z.len());
    for &a in z {
        tokens.extend(std::iter::repeat_n(MASK, k - 1));
        tokens.push(a);
    }
    Ok(PositionedSequence::contiguous(tokens, 1))
}

/// Fills every `[MASK]` of `input` from one full-mode decoder pass:
/// argmax over regular tokens and `[EOS]` (ties to the lower id), with the
/// chosen token's log-probability. Returns the filled tokens, the
/// per-mask log-probabilities and the number of decoder calls.
pub fn skip_cmlm_fill<T: Scalar>(
    model: &InferenceModel<T>,
    memory: &Tensor<T>,
    input: &PositionedSequence,
) -> Result<(Vec<TokenId>, Vec<f64>, usize)> {
    let masks: Vec<usize> = (0..input.len()).filter(|&i| input.tokens()[i] == MASK).collect();
    if masks.is_empty() {
        return Ok((input.tokens().to_vec(), Vec::new(), 0));
    }
    let logits = model.decode_parallel(input, memory, MaskMode::Full)?;
    let v = model.config().vocab_size;
    let first = (4 + model.config().chunk_sizes.len()) as TokenId;
    let mut out = input.tokens().to_vec();
    let mut lps = Vec::with_capacity(masks.len());
    let mut lp = vec![0.0; v];
    for &i in &masks {
        kernels::log_softmax_f64(logits.row(i), &mut lp);
        let mut best = EOS;
        for t in first..v as TokenId {
            if lp[t as usize] > lp[best as usize] {
                best = t;
            }
        }
        out[i] = best;
        lps.push(lp[best as usize]);
    }
    Ok((out, lps, 1))
}

/// Eq.-2 style score: stage-I log-probability plus infill
/// log-probabilities, divided by `len^α` with `len = k·m`.
pub fn combined_score(skip_at_score: f64, fill_log_probs: &[f64], len: usize, alpha: f64) -> f64 {
    let total = skip_at_score + fill_log_probs.iter().sum::<f64>();
    if len == 0 {
        total
    } else {
        total / (len as f64).powf(alpha)
    }
}

/// Prefix before the first `[EOS]`.
pub fn truncate_at_eos(tokens: &[TokenId]) -> &[TokenId] {
    match tokens.iter().position(|&t| t == EOS) {
        Some(i) => &tokens[..i],
        None => tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eos_truncation() {
        assert_eq!(truncate_at_eos(&[10, 11, EOS, 12, EOS]), &[10, 11]);
        assert!(truncate_at_eos(&[EOS, 10]).is_empty());
        assert_eq!(truncate_at_eos(&[10, 11]), &[10, 11]);
    }

    #[test]
    fn stage2_layout() {
        let s = build_stage2_input(&[10, 11, 12, EOS], 2).unwrap();
        assert_eq!(s.tokens(), &[MASK, 10, MASK, 11, MASK, 12, MASK, EOS]);
        assert_eq!(s.positions(), &[1, 2, 3, 4, 5, 6, 7, 8]);
        let s = build_stage2_input(&[EOS], 3).unwrap();
        assert_eq!(s.tokens(), &[MASK, MASK, EOS]);
        assert!(build_stage2_input(&[10], 2).is_err());
    }

    #[test]
    fn combined_score_terms() {
        assert_eq!(combined_score(0.0, &[0.0, 0.0], 4, 0.6), 0.0);
        let (p, q) = (0.7f64, 0.2f64);
        let s = combined_score(p.ln(), &[q.ln()], 2, 0.0);
        assert!((s - (p.ln() + q.ln())).abs() < 1e-15);
    }
}
