use std::marker::PhantomData;
use std::time::Instant;

use crate::bench::arena::{Arena, Phase};
use crate::bench::memory::{estimate_max_bytes, max_steps, MemoryEstimate};
use crate::data::{truncate, TokenId, BOS, EOS, MASK};
use crate::decoding::{truncate_at_eos, DecodeMode, DecodeOptions, DecodeStats};
use crate::error::{Error, Result};
use crate::model::{InferenceModel, MaskMode, ModelConfig};
use crate::numerics::kernels::{self, KeyMask, MatView};
use crate::numerics::Scalar;

#[derive(Clone, Copy, Debug)]
struct Cand {
    score: f64,
    parent: usize,
    token: TokenId,
}

impl Cand {
    /// Ranking order: score descending, then parent and token ascending.
    fn beats(&self, o: &Cand) -> bool {
        self.score > o.score
            || (self.score == o.score && (self.parent < o.parent || (self.parent == o.parent && self.token < o.token)))
    }
}

/// A finished stage-I (or AT) hypothesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Finished {
    start: usize,
    /// Generated tokens including the final `[EOS]`.
    pub len: usize,
    /// Sum of chosen-token log-probabilities.
    pub score: f64,
    /// `[EOS]` was forced at the step cap.
    pub forced: bool,
}

/// One stage-II candidate of the most recent HRT decode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    /// Index into [`Workspace::finished`].
    pub hypothesis: usize,
    /// Offset of this candidate's `k·m` rows in the stage-II buffers.
    seg_start: usize,
    mask_start: usize,
    masks: usize,
    pub len: usize,
    pub skip_at_score: f64,
    pub skip_cmlm_score: f64,
    pub combined: f64,
}

struct Beam {
    beam_cap: usize,
    step_cap: usize,
    tokens: [Vec<TokenId>; 2],
    scores: [Vec<f64>; 2],
    cur: usize,
    live: usize,
    cands: Vec<Cand>,
    next: Vec<Cand>,
    step_tokens: Vec<TokenId>,
    step_positions: Vec<usize>,
    finished: Vec<Finished>,
    fin_tokens: Vec<TokenId>,
    order: Vec<usize>,
}

struct Stage2 {
    tokens: Vec<TokenId>,
    filled: Vec<TokenId>,
    positions: Vec<usize>,
    segs: Vec<(usize, usize)>,
    mask_rows: Vec<usize>,
    mask_logp: Vec<f64>,
    candidates: Vec<Candidate>,
}

/// Preallocated state for decoding one sentence at a time. After
/// construction a decode performs no heap allocation: activations come
/// from two arenas and bookkeeping lives in fixed-capacity vectors.
pub struct Workspace<T: Scalar> {
    config: ModelConfig,
    b_at: usize,
    b_nat: usize,
    estimate: MemoryEstimate,
    state: Arena,
    scratch: Arena,
    beam: Beam,
    stage2: Stage2,
    _t: PhantomData<T>,
}

fn first_regular(config: &ModelConfig) -> TokenId {
    (4 + config.chunk_sizes.len()) as TokenId
}

impl<T: Scalar> Workspace<T> {
    /// Sized for any decode of `config`'s models with beams up to `b_at`
    /// (AT and stage I) and `b_nat` (stage II), at every supported `k`.
    pub fn new(config: &ModelConfig, b_at: usize, b_nat: usize) -> Result<Self> {
        if b_nat < 1 || b_at < b_nat {
            return Err(Error::BeamOrder { b_at, b_nat });
        }
        let l = config.max_len;
        let mut est = estimate_max_bytes::<T>(config, l, 1, b_at, b_nat);
        for &k in &config.chunk_sizes {
            est = est.max(estimate_max_bytes::<T>(config, l, k, b_at, b_nat));
        }
        let step_cap = max_steps(l, 1);
        let s2_rows = b_nat * (l + config.max_chunk());
        let cand_cap = 2 * b_at;
        Ok(Self {
            config: config.clone(),
            b_at,
            b_nat,
            estimate: est,
            state: Arena::new(est.sentence, Phase::Sentence),
            scratch: Arena::new(est.max_phase(), Phase::Idle),
            beam: Beam {
                beam_cap: b_at,
                step_cap,
                tokens: [vec![0; b_at * step_cap], vec![0; b_at * step_cap]],
                scores: [vec![0.0; b_at], vec![0.0; b_at]],
                cur: 0,
                live: 0,
                cands: Vec::with_capacity(cand_cap),
                next: Vec::with_capacity(b_at),
                step_tokens: Vec::with_capacity(b_at),
                step_positions: Vec::with_capacity(b_at),
                finished: Vec::with_capacity(cand_cap),
                fin_tokens: Vec::with_capacity(cand_cap * step_cap),
                order: Vec::with_capacity(cand_cap),
            },
            stage2: Stage2 {
                tokens: Vec::with_capacity(s2_rows),
                filled: Vec::with_capacity(s2_rows),
                positions: Vec::with_capacity(s2_rows),
                segs: Vec::with_capacity(b_nat),
                mask_rows: Vec::with_capacity(s2_rows),
                mask_logp: Vec::with_capacity(s2_rows),
                candidates: Vec::with_capacity(b_nat),
            },
            _t: PhantomData,
        })
    }

    pub fn estimate(&self) -> MemoryEstimate {
        self.estimate
    }

    /// The per-sentence arena.
    pub fn state_arena(&self) -> &Arena {
        &self.state
    }

    /// The per-phase arena.
    pub fn phase_arena(&self) -> &Arena {
        &self.scratch
    }

    /// Finished hypotheses of the last decode, in completion order.
    pub fn finished(&self) -> &[Finished] {
        &self.beam.finished
    }

    /// Generated tokens of a finished hypothesis, ending in `[EOS]`.
    pub fn finished_tokens(&self, f: &Finished) -> &[TokenId] {
        &self.beam.fin_tokens[f.start..f.start + f.len]
    }

    /// Stage-II candidates of the last HRT decode, best stage-I score first.
    pub fn candidates(&self) -> &[Candidate] {
        &self.stage2.candidates
    }

    /// Stage-II input of a candidate (masks still in place).
    pub fn candidate_input(&self, c: &Candidate) -> (&[TokenId], &[usize]) {
        (
            &self.stage2.tokens[c.seg_start..c.seg_start + c.len],
            &self.stage2.positions[c.seg_start..c.seg_start + c.len],
        )
    }

    /// A candidate's sequence after infill, before truncation.
    pub fn candidate_filled(&self, c: &Candidate) -> &[TokenId] {
        &self.stage2.filled[c.seg_start..c.seg_start + c.len]
    }

    /// Log-probabilities of the tokens chosen at a candidate's masks.
    pub fn candidate_fill_log_probs(&self, c: &Candidate) -> &[f64] {
        &self.stage2.mask_logp[c.mask_start..c.mask_start + c.masks]
    }

    /// Decodes `source` into `out` (cleared first).
    pub fn translate_into(
        &mut self,
        model: &InferenceModel<T>,
        source: &[TokenId],
        opts: &DecodeOptions,
        out: &mut Vec<TokenId>,
    ) -> Result<DecodeStats> {
        self.run(model, source, opts, out, false)
    }

    /// Runs only the autoregressive stage; results are left in
    /// [`Workspace::finished`]. Returns the number of decoder calls.
    pub fn stage_one(&mut self, model: &InferenceModel<T>, source: &[TokenId], opts: &DecodeOptions) -> Result<usize> {
        let mut out = Vec::new();
        Ok(self.run(model, source, opts, &mut out, true)?.stage1_steps)
    }

    fn run(
        &mut self,
        model: &InferenceModel<T>,
        source: &[TokenId],
        opts: &DecodeOptions,
        out: &mut Vec<TokenId>,
        stage_one_only: bool,
    ) -> Result<DecodeStats> {
        let t0 = Instant::now();
        let config = model.config();
        if config != &self.config {
            return Err(Error::ConfigMismatch("workspace was sized for a different model".into()));
        }
        let l = opts.max_len.unwrap_or(config.max_len).min(config.max_len);
        let (k, beam) = match opts.mode {
            DecodeMode::At => (1, opts.b_at),
            DecodeMode::Hrt { k } => {
                if !config.supports_chunk(k) {
                    return Err(Error::UnsupportedChunk(k));
                }
                if opts.b_nat < 1 || opts.b_at < opts.b_nat {
                    return Err(Error::BeamOrder {
                        b_at: opts.b_at,
                        b_nat: opts.b_nat,
                    });
                }
                (k, opts.b_at)
            }
        };
        if beam < 1 || beam > self.b_at || opts.b_nat > self.b_nat {
            return Err(Error::InvalidConfig(format!(
                "beam {beam}/{} exceeds workspace capacity {}/{}",
                opts.b_nat, self.b_at, self.b_nat
            )));
        }
        let src = truncate(source, l);
        if src.is_empty() {
            return Err(Error::shape("translate", "empty source"));
        }
        let n = src.len();
        let d = config.d_model;
        let layers = config.dec_layers;
        let steps_cap = max_steps(l, k);

        self.state.begin(Phase::Sentence);
        self.scratch.begin(Phase::Encoder);
        let Self {
            state,
            scratch,
            beam: book,
            stage2,
            ..
        } = self;
        let memory: &mut [T] = state.alloc(n * d)?;
        model.encode_into(src, scratch, memory)?;
        let cross_kv: &mut [T] = state.alloc(layers * n * 2 * d)?;
        model.cross_kv_into(memory, n, cross_kv);
        let cache_a: &mut [T] = state.alloc(layers * beam * steps_cap * 2 * d)?;
        let cache_b: &mut [T] = state.alloc(layers * beam * steps_cap * 2 * d)?;

        let start = if k == 1 { BOS } else { config_bos_k(config, k) };
        let steps = beam_search(
            model,
            scratch,
            book,
            [cache_a, cache_b],
            cross_kv,
            n,
            start,
            k,
            steps_cap,
            beam,
        )?;

        let alpha = opts.length_penalty;
        out.clear();
        let mut stats = DecodeStats {
            stage1_steps: steps,
            decoder_calls: steps,
            ..DecodeStats::default()
        };
        if stage_one_only {
            return Ok(stats);
        }
        if k == 1 {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, f) in book.finished.iter().enumerate() {
                let s = f.score / (f.len as f64).powf(alpha);
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            let f = book.finished[best];
            let toks = &book.fin_tokens[f.start..f.start + f.len];
            out.extend_from_slice(truncate(truncate_at_eos(toks), l));
            stats.skip_at_score = f.score;
            stats.score = best_score;
            stats.forced_finish = f.forced;
        } else {
            stage_two(model, scratch, book, stage2, cross_kv, n, k, opts.b_nat, alpha)?;
            stats.decoder_calls += 1;
            let mut best = 0;
            for (i, c) in stage2.candidates.iter().enumerate() {
                if c.combined > stage2.candidates[best].combined {
                    best = i;
                }
            }
            let c = stage2.candidates[best];
            let filled = &stage2.filled[c.seg_start..c.seg_start + c.len];
            out.extend_from_slice(truncate(truncate_at_eos(filled), l));
            stats.skip_at_score = c.skip_at_score;
            stats.skip_cmlm_score = c.skip_cmlm_score;
            stats.score = c.combined;
            stats.forced_finish = book.finished[c.hypothesis].forced;
            stats.anchors = book.finished[c.hypothesis].len;
        }
        stats.wall_time = t0.elapsed();
        Ok(stats)
    }
}

fn config_bos_k(config: &ModelConfig, k: usize) -> TokenId {
    let i = config.chunk_sizes.iter().position(|&c| c == k).expect("checked supported");
    (4 + i) as TokenId
}

/// Shared beam search for AT (`stride = 1`, from `[BOS]`) and Skip-AT
/// (`stride = k`, from `[BOS_k]`). Fills `book.finished`; returns the
/// number of decoder calls made.
#[allow(clippy::too_many_arguments)]
fn beam_search<T: Scalar>(
    model: &InferenceModel<T>,
    scratch: &mut Arena,
    book: &mut Beam,
    caches: [&mut [T]; 2],
    cross_kv: &[T],
    n_src: usize,
    start: TokenId,
    stride: usize,
    max_steps: usize,
    beam: usize,
) -> Result<usize> {
    let config = model.config();
    let d = config.d_model;
    let v = config.vocab_size;
    let heads = config.n_heads;
    let dh = config.head_dim();
    let layers = config.dec_layers;
    let first_reg = first_regular(config);
    let slot_len = max_steps * 2 * d;
    let layer_len = beam * slot_len;
    debug_assert!(beam <= book.beam_cap && max_steps <= book.step_cap);
    let [mut cache_cur, mut cache_next] = caches;

    book.finished.clear();
    book.fin_tokens.clear();
    book.cur = 0;
    book.live = 1;
    book.scores[0][0] = 0.0;
    let sc = book.step_cap;

    let mut steps = 0;
    for t in 0..max_steps {
        steps += 1;
        let live = book.live;
        let cur = book.cur;
        book.step_tokens.clear();
        book.step_positions.clear();
        for b in 0..live {
            let tok = if t == 0 { start } else { book.tokens[cur][b * sc + t - 1] };
            book.step_tokens.push(tok);
            book.step_positions.push(t * stride);
        }

        scratch.begin(Phase::SkipAt);
        {
            let x: &mut [T] = scratch.alloc(live * d)?;
            model.embed_decoder(&book.step_tokens, &book.step_positions, x)?;
            let mut bufs = crate::model::Buffers::alloc(scratch, config, live, (t + 1).max(n_src), true)?;
            let cache = &mut *cache_cur;
            model.decoder_stack(x, live, cross_kv, n_src, &mut bufs, |l, qkv, att, scores| {
                for b in 0..live {
                    let slot = l * layer_len + b * slot_len;
                    cache[slot + t * 2 * d..slot + (t + 1) * 2 * d].copy_from_slice(&qkv[b * 3 * d + d..(b + 1) * 3 * d]);
                    let kv = &cache[slot..slot + (t + 1) * 2 * d];
                    kernels::attention_segment(
                        MatView::new(qkv, 3 * d, 0),
                        b,
                        1,
                        MatView::new(kv, 2 * d, 0),
                        MatView::new(kv, 2 * d, d),
                        0,
                        t + 1,
                        heads,
                        dh,
                        &KeyMask::default(),
                        att,
                        d,
                        b,
                        None,
                        scores,
                    )?;
                }
                Ok(())
            })?;
            let logits: &mut [T] = scratch.alloc(live * v)?;
            model.logits_into(bufs.h, live, logits);
            let logp: &mut [f64] = scratch.alloc(live * v)?;
            for b in 0..live {
                kernels::log_softmax_f64(&logits[b * v..(b + 1) * v], &mut logp[b * v..(b + 1) * v]);
            }

            let cap = 2 * beam;
            book.cands.clear();
            let last = t + 1 == max_steps;
            for b in 0..live {
                let base = book.scores[cur][b];
                let row = &logp[b * v..(b + 1) * v];
                let mut consider = |tok: TokenId| {
                    let c = Cand {
                        score: base + row[tok as usize],
                        parent: b,
                        token: tok,
                    };
                    if book.cands.len() == cap {
                        if !c.beats(book.cands.last().unwrap()) {
                            return;
                        }
                        book.cands.pop();
                    }
                    let at = book.cands.iter().position(|o| c.beats(o)).unwrap_or(book.cands.len());
                    book.cands.insert(at, c);
                };
                consider(EOS);
                if !last {
                    for tok in first_reg..v as TokenId {
                        consider(tok);
                    }
                }
            }
        }

        book.next.clear();
        for (rank, c) in book.cands.iter().enumerate() {
            if c.token == EOS {
                if rank < beam {
                    let start_at = book.fin_tokens.len();
                    let p = c.parent * sc;
                    book.fin_tokens.extend_from_slice(&book.tokens[cur][p..p + t]);
                    book.fin_tokens.push(EOS);
                    book.finished.push(Finished {
                        start: start_at,
                        len: t + 1,
                        score: c.score,
                        forced: t + 1 == max_steps,
                    });
                }
            } else if book.next.len() < beam {
                book.next.push(*c);
            }
        }
        if book.finished.len() >= beam || book.next.is_empty() {
            break;
        }
        let nxt = 1 - cur;
        let (lo, hi) = book.tokens.split_at_mut(1);
        let (src_tok, dst_tok) = if cur == 0 { (&lo[0], &mut hi[0]) } else { (&hi[0], &mut lo[0]) };
        for (j, c) in book.next.iter().enumerate() {
            let p = c.parent;
            dst_tok[j * sc..j * sc + t].copy_from_slice(&src_tok[p * sc..p * sc + t]);
            dst_tok[j * sc + t] = c.token;
            book.scores[nxt][j] = c.score;
            for l in 0..layers {
                let from = l * layer_len + p * slot_len;
                let to = l * layer_len + j * slot_len;
                let n = (t + 1) * 2 * d;
                cache_next[to..to + n].copy_from_slice(&cache_cur[from..from + n]);
            }
        }
        book.live = book.next.len();
        book.cur = nxt;
        std::mem::swap(&mut cache_cur, &mut cache_next);
    }
    Ok(steps)
}

/// Builds the stage-II inputs of the top `b_nat` finished hypotheses,
/// fills every mask in one batched full-mode pass and scores each
/// candidate.
#[allow(clippy::too_many_arguments)]
fn stage_two<T: Scalar>(
    model: &InferenceModel<T>,
    scratch: &mut Arena,
    book: &mut Beam,
    s2: &mut Stage2,
    cross_kv: &[T],
    n_src: usize,
    k: usize,
    b_nat: usize,
    alpha: f64,
) -> Result<()> {
    let config = model.config();
    let d = config.d_model;
    let v = config.vocab_size;
    let first_reg = first_regular(config);

    // Rank finished hypotheses by raw stage-I score, stable on ties.
    book.order.clear();
    for i in 0..book.finished.len() {
        let s = book.finished[i].score;
        let at = book
            .order
            .iter()
            .position(|&j| s > book.finished[j].score)
            .unwrap_or(book.order.len());
        book.order.insert(at, i);
    }
    let take = b_nat.min(book.order.len());

    s2.tokens.clear();
    s2.filled.clear();
    s2.positions.clear();
    s2.segs.clear();
    s2.mask_rows.clear();
    s2.candidates.clear();
    for &h in &book.order[..take] {
        let f = book.finished[h];
        let anchors = &book.fin_tokens[f.start..f.start + f.len];
        let seg_start = s2.tokens.len();
        let mask_start = s2.mask_rows.len();
        for p in 1..=k * f.len {
            if p % k == 0 {
                s2.tokens.push(anchors[p / k - 1]);
            } else {
                s2.mask_rows.push(s2.tokens.len());
                s2.tokens.push(MASK);
            }
            s2.positions.push(p);
        }
        s2.segs.push((seg_start, k * f.len));
        s2.candidates.push(Candidate {
            hypothesis: h,
            seg_start,
            mask_start,
            masks: s2.mask_rows.len() - mask_start,
            len: k * f.len,
            skip_at_score: f.score,
            skip_cmlm_score: 0.0,
            combined: 0.0,
        });
    }

    scratch.begin(Phase::SkipCmlm);
    let b = model.decode_segments(
        &s2.tokens,
        &s2.positions,
        &s2.segs,
        MaskMode::Full,
        Some(&s2.mask_rows),
        cross_kv,
        n_src,
        scratch,
    )?;
    let masks = s2.mask_rows.len();
    let hm = &b.h[..masks * d];
    let logits: &mut [T] = scratch.alloc(masks * v)?;
    model.logits_into(hm, masks, logits);
    let lp: &mut [f64] = scratch.alloc(v)?;
    s2.mask_logp.clear();
    s2.filled.clear();
    s2.filled.extend_from_slice(&s2.tokens);
    for i in 0..masks {
        kernels::log_softmax_f64(&logits[i * v..(i + 1) * v], lp);
        let mut best = EOS;
        for tok in first_reg..v as TokenId {
            if lp[tok as usize] > lp[best as usize] || (lp[tok as usize] == lp[best as usize] && tok < best) {
                best = tok;
            }
        }
        s2.filled[s2.mask_rows[i]] = best;
        s2.mask_logp.push(lp[best as usize]);
    }
    for c in s2.candidates.iter_mut() {
        let sum: f64 = s2.mask_logp[c.mask_start..c.mask_start + c.masks].iter().sum();
        c.skip_cmlm_score = sum;
        c.combined = (c.skip_at_score + sum) / (c.len as f64).powf(alpha);
    }
    Ok(())
}
