//! Forward-only engine over plain weight buffers, generic in precision.
//!
//! The primitives here write into caller-provided slices so the decoding
//! loops can run entirely out of arena memory. The convenience entry
//! points at the bottom allocate their own temporaries.

use crate::bench::arena::{footprint, Arena, Phase};
use crate::data::{TokenId, PAD};
use crate::error::{Error, Result};
use crate::model::{positional_encoding_into, AttentionMask, MaskMode, ModelConfig, PositionedSequence, Seq2Seq};
use crate::model::seq2seq::{Dense, Norm};
use crate::numerics::kernels::{self, KeyMask, MatView};
use crate::numerics::{ParamId, ParamStore, Scalar, Tensor, LAYER_NORM_EPS};

#[derive(Clone, Debug)]
pub struct NormW<T> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct DenseW<T> {
    /// `[din, dout]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseW<T> {
    fn dout(&self) -> usize {
        self.bias.len()
    }

    fn apply(&self, x: &[T], rows: usize, out: &mut [T]) {
        kernels::linear(x, rows, &self.weight, Some(&self.bias), self.dout(), out);
    }

    fn apply_acc(&self, x: &[T], rows: usize, out: &mut [T]) {
        kernels::linear_acc(x, rows, &self.weight, Some(&self.bias), self.dout(), out);
    }
}

impl<T: Scalar> NormW<T> {
    fn apply(&self, x: &[T], out: &mut [T]) {
        kernels::layer_norm(x, &self.gain, &self.bias, T::from_f64_lossy(LAYER_NORM_EPS), out, None);
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayerW<T> {
    pub ln1: NormW<T>,
    pub qkv: DenseW<T>,
    pub attn_out: DenseW<T>,
    pub ln2: NormW<T>,
    pub fc1: DenseW<T>,
    pub fc2: DenseW<T>,
}

#[derive(Clone, Debug)]
pub struct DecoderLayerW<T> {
    pub ln1: NormW<T>,
    pub qkv: DenseW<T>,
    pub attn_out: DenseW<T>,
    pub ln2: NormW<T>,
    pub cross_q: DenseW<T>,
    pub cross_kv: DenseW<T>,
    pub cross_out: DenseW<T>,
    pub ln3: NormW<T>,
    pub fc1: DenseW<T>,
    pub fc2: DenseW<T>,
}

/// The decoder's weights. Causal and full decoding both read this one set.
#[derive(Clone, Debug)]
pub struct DecoderWeights<T> {
    pub layers: Vec<DecoderLayerW<T>>,
    /// `[vocab, d]`, shared by the input embedding and the output layer.
    pub embed: Vec<T>,
    /// `embed` transposed to `[d, vocab]` for the output projection.
    pub embed_t: Vec<T>,
    pub norm: NormW<T>,
}

#[derive(Clone, Debug)]
pub struct InferenceModel<T: Scalar> {
    config: ModelConfig,
    enc_embed: Vec<T>,
    enc_layers: Vec<EncoderLayerW<T>>,
    enc_norm: NormW<T>,
    decoder: DecoderWeights<T>,
    /// `[num_positions, d]`
    pos_table: Vec<T>,
    emb_scale: T,
}

/// Activation buffers for one pass over `rows` rows.
pub struct Buffers<'a, T> {
    pub h: &'a mut [T],
    pub qkv: &'a mut [T],
    pub att: &'a mut [T],
    pub q: &'a mut [T],
    pub ff: &'a mut [T],
    pub scores: &'a mut [T],
}

impl<'a, T: Scalar> Buffers<'a, T> {
    /// `cross` reserves the cross-attention query buffer (decoder only).
    pub fn alloc(arena: &'a Arena, config: &ModelConfig, rows: usize, max_keys: usize, cross: bool) -> Result<Self> {
        let d = config.d_model;
        Ok(Self {
            h: arena.alloc(rows * d)?,
            qkv: arena.alloc(rows * 3 * d)?,
            att: arena.alloc(rows * d)?,
            q: arena.alloc(if cross { rows * d } else { 0 })?,
            ff: arena.alloc(rows * config.d_ff)?,
            scores: arena.alloc(kernels::attention_scratch_len(max_keys, config.head_dim()))?,
        })
    }

    /// Bytes [`Buffers::alloc`] takes from an arena.
    pub fn bytes(config: &ModelConfig, rows: usize, max_keys: usize, cross: bool) -> usize {
        let d = config.d_model;
        footprint::<T>(rows * d) * 2
            + footprint::<T>(rows * 3 * d)
            + footprint::<T>(if cross { rows * d } else { 0 })
            + footprint::<T>(rows * config.d_ff)
            + footprint::<T>(kernels::attention_scratch_len(max_keys, config.head_dim()))
    }
}

fn norm_w<T: Scalar>(p: &ParamStore, n: Norm) -> NormW<T> {
    NormW {
        gain: cast(p, n.gain),
        bias: cast(p, n.bias),
    }
}

fn dense_w<T: Scalar>(p: &ParamStore, d: Dense) -> DenseW<T> {
    DenseW {
        weight: cast(p, d.weight),
        bias: cast(p, d.bias),
    }
}

fn transpose<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (r, row) in x.chunks_exact(cols).enumerate().take(rows) {
        for (c, &v) in row.iter().enumerate() {
            out[c * rows + r] = v;
        }
    }
    out
}

fn cast<T: Scalar>(p: &ParamStore, id: ParamId) -> Vec<T> {
    p.value(id).data().iter().map(|&v| T::from_f64_lossy(v)).collect()
}

impl<T: Scalar> InferenceModel<T> {
    pub fn from_model(model: &Seq2Seq) -> Self {
        let p = model.params();
        let ids = model.ids();
        let config = model.config().clone();
        let d = config.d_model;
        let npos = config.num_positions();
        let mut pos_table = vec![T::zero(); npos * d];
        for (i, row) in pos_table.chunks_exact_mut(d).enumerate() {
            positional_encoding_into(i, row);
        }
        Self {
            enc_embed: cast(p, ids.enc_embed),
            enc_layers: ids
                .enc_layers
                .iter()
                .map(|l| EncoderLayerW {
                    ln1: norm_w(p, l.ln1),
                    qkv: dense_w(p, l.qkv),
                    attn_out: dense_w(p, l.attn_out),
                    ln2: norm_w(p, l.ln2),
                    fc1: dense_w(p, l.fc1),
                    fc2: dense_w(p, l.fc2),
                })
                .collect(),
            enc_norm: norm_w(p, ids.enc_norm),
            decoder: DecoderWeights {
                layers: ids
                    .dec_layers
                    .iter()
                    .map(|l| DecoderLayerW {
                        ln1: norm_w(p, l.ln1),
                        qkv: dense_w(p, l.qkv),
                        attn_out: dense_w(p, l.attn_out),
                        ln2: norm_w(p, l.ln2),
                        cross_q: dense_w(p, l.cross_q),
                        cross_kv: dense_w(p, l.cross_kv),
                        cross_out: dense_w(p, l.cross_out),
                        ln3: norm_w(p, l.ln3),
                        fc1: dense_w(p, l.fc1),
                        fc2: dense_w(p, l.fc2),
                    })
                    .collect(),
                embed: cast(p, ids.dec_embed),
                embed_t: transpose(&cast(p, ids.dec_embed), config.vocab_size, d),
                norm: norm_w(p, ids.dec_norm),
            },
            pos_table,
            emb_scale: T::from_f64_lossy((d as f64).sqrt()),
            config,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Weights used by the decoder in `mode`; the same set for both modes.
    pub fn decoder_weights(&self, _mode: MaskMode) -> &DecoderWeights<T> {
        &self.decoder
    }

    fn check_position(&self, p: usize) -> Result<()> {
        if p >= self.config.num_positions() {
            return Err(Error::Overlength {
                len: p,
                max: self.config.num_positions() - 1,
            });
        }
        Ok(())
    }

    fn embed_row(&self, table: &[T], tok: TokenId, pos: usize, out: &mut [T]) -> Result<()> {
        let d = self.config.d_model;
        let t = tok as usize;
        if t >= self.config.vocab_size {
            return Err(Error::shape("embed", format!("id {t} >= vocab {}", self.config.vocab_size)));
        }
        self.check_position(pos)?;
        let e = &table[t * d..(t + 1) * d];
        let pe = &self.pos_table[pos * d..(pos + 1) * d];
        for i in 0..d {
            out[i] = e[i] * self.emb_scale + pe[i];
        }
        Ok(())
    }

    /// Writes decoder input embeddings for `tokens` at `positions` into `x`.
    pub fn embed_decoder(&self, tokens: &[TokenId], positions: &[usize], x: &mut [T]) -> Result<()> {
        let d = self.config.d_model;
        for (r, (&t, &p)) in tokens.iter().zip(positions).enumerate() {
            self.embed_row(&self.decoder.embed, t, p, &mut x[r * d..(r + 1) * d])?;
        }
        Ok(())
    }

    /// Runs the encoder stack over `x` (embedded input, `n` rows) grouped
    /// into segments; the normalized output is written to `out`.
    fn encoder_stack(
        &self,
        x: &mut [T],
        n: usize,
        segs: &[(usize, usize)],
        padding: Option<&[bool]>,
        b: &mut Buffers<'_, T>,
        out: &mut [T],
    ) -> Result<()> {
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dh = self.config.head_dim();
        let x = &mut x[..n * d];
        for l in &self.enc_layers {
            l.ln1.apply(x, &mut b.h[..n * d]);
            l.qkv.apply(&b.h[..n * d], n, b.qkv);
            for &(s, len) in segs {
                let mask = KeyMask {
                    causal_offset: None,
                    padding: padding.map(|p| &p[s..s + len]),
                };
                kernels::attention_segment(
                    MatView::new(b.qkv, 3 * d, 0),
                    s,
                    len,
                    MatView::new(b.qkv, 3 * d, d),
                    MatView::new(b.qkv, 3 * d, 2 * d),
                    s,
                    len,
                    heads,
                    dh,
                    &mask,
                    b.att,
                    d,
                    s,
                    None,
                    b.scores,
                )?;
            }
            l.attn_out.apply_acc(&b.att[..n * d], n, x);
            l.ln2.apply(x, &mut b.h[..n * d]);
            l.fc1.apply(&b.h[..n * d], n, b.ff);
            kernels::relu_inplace(&mut b.ff[..n * self.config.d_ff]);
            l.fc2.apply_acc(&b.ff[..n * self.config.d_ff], n, x);
        }
        self.enc_norm.apply(x, &mut out[..n * d]);
        Ok(())
    }

    /// Encodes one source sentence into `memory` (`[n, d]`), using
    /// `scratch` for activations.
    pub fn encode_into(&self, src: &[TokenId], scratch: &Arena, memory: &mut [T]) -> Result<()> {
        let n = src.len();
        if n > self.config.max_len {
            return Err(Error::Overlength {
                len: n,
                max: self.config.max_len,
            });
        }
        if n == 0 {
            return Err(Error::shape("encode", "empty source"));
        }
        let d = self.config.d_model;
        let x: &mut [T] = scratch.alloc(n * d)?;
        for (r, &t) in src.iter().enumerate() {
            self.embed_row(&self.enc_embed, t, r, &mut x[r * d..(r + 1) * d])?;
        }
        let mut b = Buffers::alloc(scratch, &self.config, n, n, false)?;
        self.encoder_stack(x, n, &[(0, n)], None, &mut b, memory)
    }

    /// Scratch bytes [`InferenceModel::encode_into`] needs for `n` tokens.
    pub fn encode_scratch_bytes(config: &ModelConfig, n: usize) -> usize {
        footprint::<T>(n * config.d_model) + Buffers::<T>::bytes(config, n, n, false)
    }

    /// Precomputes cross-attention keys and values for every decoder
    /// layer: `out` is `[dec_layers, n_src, 2d]`.
    pub fn cross_kv_into(&self, memory: &[T], n_src: usize, out: &mut [T]) {
        let d = self.config.d_model;
        let per = n_src * 2 * d;
        for (l, layer) in self.decoder.layers.iter().enumerate() {
            layer.cross_kv.apply(&memory[..n_src * d], n_src, &mut out[l * per..(l + 1) * per]);
        }
    }

    /// Runs the decoder over `n` embedded rows in `x`. `self_attn` fills
    /// `att` from the layer's packed `qkv`; this is where the caller
    /// decides the masking and where keys come from. The normalized
    /// hidden states end up in `b.h`.
    pub fn decoder_stack<F>(
        &self,
        x: &mut [T],
        n: usize,
        cross_kv: &[T],
        n_src: usize,
        b: &mut Buffers<'_, T>,
        mut self_attn: F,
    ) -> Result<()>
    where
        F: FnMut(usize, &[T], &mut [T], &mut [T]) -> Result<()>,
    {
        let d = self.config.d_model;
        let x = &mut x[..n * d];
        for li in 0..self.decoder.layers.len() {
            self.layer_qkv(li, x, n, b);
            self_attn(li, &b.qkv[..n * 3 * d], &mut b.att[..n * d], b.scores)?;
            self.layer_tail(li, x, n, cross_kv, n_src, b)?;
        }
        self.decoder.norm.apply(x, &mut b.h[..n * d]);
        Ok(())
    }

    /// Pre-norm and packed `[q | k | v]` projection of decoder layer `li`.
    fn layer_qkv(&self, li: usize, x: &[T], n: usize, b: &mut Buffers<'_, T>) {
        let d = self.config.d_model;
        let l = &self.decoder.layers[li];
        l.ln1.apply(&x[..n * d], &mut b.h[..n * d]);
        l.qkv.apply(&b.h[..n * d], n, b.qkv);
    }

    /// Everything in decoder layer `li` after self-attention, for the `n`
    /// rows of `x` whose attention output is in `b.att`.
    fn layer_tail(&self, li: usize, x: &mut [T], n: usize, cross_kv: &[T], n_src: usize, b: &mut Buffers<'_, T>) -> Result<()> {
        let d = self.config.d_model;
        let dff = self.config.d_ff;
        let l = &self.decoder.layers[li];
        let x = &mut x[..n * d];
        l.attn_out.apply_acc(&b.att[..n * d], n, x);

        l.ln2.apply(x, &mut b.h[..n * d]);
        l.cross_q.apply(&b.h[..n * d], n, b.q);
        let per = n_src * 2 * d;
        let kv = &cross_kv[li * per..(li + 1) * per];
        kernels::attention_segment(
            MatView::new(b.q, d, 0),
            0,
            n,
            MatView::new(kv, 2 * d, 0),
            MatView::new(kv, 2 * d, d),
            0,
            n_src,
            self.config.n_heads,
            self.config.head_dim(),
            &KeyMask::default(),
            b.att,
            d,
            0,
            None,
            b.scores,
        )?;
        l.cross_out.apply_acc(&b.att[..n * d], n, x);

        l.ln3.apply(x, &mut b.h[..n * d]);
        l.fc1.apply(&b.h[..n * d], n, b.ff);
        kernels::relu_inplace(&mut b.ff[..n * dff]);
        l.fc2.apply_acc(&b.ff[..n * dff], n, x);
        Ok(())
    }

    /// Logits for `rows` hidden vectors: `out = h · Eᵀ`.
    pub fn logits_into(&self, h: &[T], rows: usize, out: &mut [T]) {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        kernels::gemm_direct(rows, v, d, h, &self.decoder.embed_t, false, out, false);
    }

    /// Parallel decode over packed segments sharing one source. Segment
    /// `s` covers rows `segs[s]` of `tokens`/`positions`.
    ///
    /// With `outputs = None` hidden states for all rows are left in the
    /// returned buffers' `h`. With `Some(rows)` (ascending, full mode only)
    /// the last layer still reads keys and values from every row but is
    /// evaluated only at `rows`, whose states fill the first `rows.len()`
    /// rows of `h` in order.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_segments<'a>(
        &self,
        tokens: &[TokenId],
        positions: &[usize],
        segs: &[(usize, usize)],
        mode: MaskMode,
        outputs: Option<&[usize]>,
        cross_kv: &[T],
        n_src: usize,
        scratch: &'a Arena,
    ) -> Result<Buffers<'a, T>> {
        let n = tokens.len();
        let d = self.config.d_model;
        let max_seg = segs.iter().map(|s| s.1).max().unwrap_or(0);
        if let Some(rows) = outputs {
            if mode == MaskMode::Causal {
                return Err(Error::InvalidConfig("output rows need full-mode decoding".into()));
            }
            if rows.windows(2).any(|w| w[0] >= w[1]) || rows.last().is_some_and(|&r| r >= n) {
                return Err(Error::shape("decode_segments", "output rows must be ascending and in range"));
            }
        }
        let x: &mut [T] = scratch.alloc(n * d)?;
        self.embed_decoder(tokens, positions, x)?;
        let mut b = Buffers::alloc(scratch, &self.config, n, max_seg.max(n_src), true)?;
        let heads = self.config.n_heads;
        let dh = self.config.head_dim();
        let mask = KeyMask {
            causal_offset: match mode {
                MaskMode::Causal => Some(0),
                MaskMode::Full => None,
            },
            padding: None,
        };
        let last = self.decoder.layers.len() - 1;
        let mut rows_out = n;
        for li in 0..=last {
            self.layer_qkv(li, x, n, &mut b);
            let qkv = &b.qkv[..n * 3 * d];
            match outputs {
                Some(rows) if li == last => {
                    // Gather the selected queries, attend over whole segments,
                    // then compact the residual stream to those rows.
                    for (c, &r) in rows.iter().enumerate() {
                        b.q[c * d..(c + 1) * d].copy_from_slice(&qkv[r * 3 * d..r * 3 * d + d]);
                    }
                    let mut c0 = 0;
                    for &(s, len) in segs {
                        let cl = rows[c0..].iter().take_while(|&&r| r < s + len).count();
                        if cl > 0 {
                            kernels::attention_segment(
                                MatView::new(b.q, d, 0),
                                c0,
                                cl,
                                MatView::new(qkv, 3 * d, d),
                                MatView::new(qkv, 3 * d, 2 * d),
                                s,
                                len,
                                heads,
                                dh,
                                &mask,
                                b.att,
                                d,
                                c0,
                                None,
                                b.scores,
                            )?;
                        }
                        c0 += cl;
                    }
                    for (c, &r) in rows.iter().enumerate() {
                        x.copy_within(r * d..(r + 1) * d, c * d);
                    }
                    rows_out = rows.len();
                }
                _ => {
                    for &(s, len) in segs {
                        kernels::attention_segment(
                            MatView::new(qkv, 3 * d, 0),
                            s,
                            len,
                            MatView::new(qkv, 3 * d, d),
                            MatView::new(qkv, 3 * d, 2 * d),
                            s,
                            len,
                            heads,
                            dh,
                            &mask,
                            b.att,
                            d,
                            s,
                            None,
                            b.scores,
                        )?;
                    }
                }
            }
            self.layer_tail(li, x, rows_out, cross_kv, n_src, &mut b)?;
        }
        self.decoder.norm.apply(&x[..rows_out * d], &mut b.h[..rows_out * d]);
        Ok(b)
    }

    /// Scratch bytes for [`InferenceModel::decode_segments`] over `n` rows
    /// whose longest segment is `max_seg`.
    pub fn decode_segments_bytes(config: &ModelConfig, n: usize, max_seg: usize, n_src: usize) -> usize {
        footprint::<T>(n * config.d_model) + Buffers::<T>::bytes(config, n, max_seg.max(n_src), true)
    }

    // Convenience entry points with private temporaries.

    /// Encoder memory `[len, d_model]` for one source.
    pub fn encode(&self, src: &[TokenId]) -> Result<Tensor<T>> {
        let n = src.len();
        let scratch = Arena::new(Self::encode_scratch_bytes(&self.config, n), Phase::Encoder);
        let mut mem = vec![T::zero(); n * self.config.d_model];
        self.encode_into(src, &scratch, &mut mem)?;
        Tensor::new(vec![n, self.config.d_model], mem)
    }

    /// Encodes a padded batch in one pass with key-padding masks and
    /// returns each sentence's unpadded memory.
    pub fn encode_batch_padded(&self, sources: &[&[TokenId]]) -> Result<Vec<Tensor<T>>> {
        let d = self.config.d_model;
        let width = sources.iter().map(|s| s.len()).max().unwrap_or(0);
        if width > self.config.max_len {
            return Err(Error::Overlength {
                len: width,
                max: self.config.max_len,
            });
        }
        let n = width * sources.len();
        let mut x = vec![T::zero(); n * d];
        let mut padding = vec![false; n];
        let mut segs = Vec::with_capacity(sources.len());
        for (b, s) in sources.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::shape("encode", "empty source"));
            }
            segs.push((b * width, width));
            for j in 0..width {
                let r = b * width + j;
                let tok = if j < s.len() { s[j] } else { PAD };
                padding[r] = j >= s.len();
                self.embed_row(&self.enc_embed, tok, j, &mut x[r * d..(r + 1) * d])?;
            }
        }
        let scratch = Arena::new(Buffers::<T>::bytes(&self.config, n, width, false), Phase::Encoder);
        let mut b = Buffers::alloc(&scratch, &self.config, n, width, false)?;
        let mut out = vec![T::zero(); n * d];
        self.encoder_stack(&mut x, n, &segs, Some(&padding), &mut b, &mut out)?;
        sources
            .iter()
            .enumerate()
            .map(|(b, s)| {
                let start = b * width * d;
                Tensor::new(vec![s.len(), d], out[start..start + s.len() * d].to_vec())
            })
            .collect()
    }

    fn cross_kv(&self, memory: &Tensor<T>) -> Result<(Vec<T>, usize)> {
        let d = self.config.d_model;
        if memory.rank() != 2 || memory.cols() != d {
            return Err(Error::shape("decode", format!("memory shape {:?}", memory.shape())));
        }
        let n_src = memory.shape()[0];
        let mut kv = vec![T::zero(); self.config.dec_layers * n_src * 2 * d];
        self.cross_kv_into(memory.data(), n_src, &mut kv);
        Ok((kv, n_src))
    }

    /// Logits for every position of `input` in one decoder pass.
    pub fn decode_parallel(&self, input: &PositionedSequence, memory: &Tensor<T>, mode: MaskMode) -> Result<Tensor<T>> {
        let n = input.len();
        if n == 0 {
            return Err(Error::shape("decode", "empty input"));
        }
        if n > self.config.num_positions() {
            return Err(Error::Overlength {
                len: n,
                max: self.config.num_positions(),
            });
        }
        let (kv, n_src) = self.cross_kv(memory)?;
        let scratch = Arena::new(Self::decode_segments_bytes(&self.config, n, n, n_src), Phase::SkipCmlm);
        let b = self.decode_segments(input.tokens(), input.positions(), &[(0, n)], mode, None, &kv, n_src, &scratch)?;
        let v = self.config.vocab_size;
        let mut logits = vec![T::zero(); n * v];
        self.logits_into(b.h, n, &mut logits);
        Tensor::new(vec![n, v], logits)
    }
}

/// Self-attention key/value cache for step-by-step causal decoding of one
/// sequence.
pub struct DecoderCache<'m, T: Scalar> {
    model: &'m InferenceModel<T>,
    cross_kv: Vec<T>,
    n_src: usize,
    /// Per layer `[steps, 2d]`.
    self_kv: Vec<Vec<T>>,
    last_position: Option<usize>,
    steps: usize,
}

impl<'m, T: Scalar> DecoderCache<'m, T> {
    pub fn new(model: &'m InferenceModel<T>, memory: &Tensor<T>) -> Result<Self> {
        let (cross_kv, n_src) = model.cross_kv(memory)?;
        Ok(Self {
            model,
            cross_kv,
            n_src,
            self_kv: vec![Vec::new(); model.config.dec_layers],
            last_position: None,
            steps: 0,
        })
    }

    /// Number of cached steps.
    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    /// Appends `new` (causal mode) and returns logits for each new token.
    pub fn decode_incremental(&mut self, new: &PositionedSequence) -> Result<Tensor<T>> {
        let m = self.model;
        let n = new.len();
        if n == 0 {
            return Err(Error::shape("decode_incremental", "no new tokens"));
        }
        if let (Some(last), Some(&first)) = (self.last_position, new.positions().first()) {
            if first <= last {
                return Err(Error::PositionOrder(format!(
                    "new position {first} does not follow cached position {last}"
                )));
            }
        }
        let d = m.config.d_model;
        let past = self.steps;
        let total = past + n;
        let mask = AttentionMask::new(MaskMode::Causal, n, total)?;
        let scratch = Arena::new(
            InferenceModel::<T>::decode_segments_bytes(&m.config, n, total, self.n_src),
            Phase::SkipAt,
        );
        let x: &mut [T] = scratch.alloc(n * d)?;
        m.embed_decoder(new.tokens(), new.positions(), x)?;
        let mut b = Buffers::alloc(&scratch, &m.config, n, total.max(self.n_src), true)?;
        let heads = m.config.n_heads;
        let dh = m.config.head_dim();
        let self_kv = &mut self.self_kv;
        m.decoder_stack(x, n, &self.cross_kv, self.n_src, &mut b, |l, qkv, att, scores| {
            let cache = &mut self_kv[l];
            for r in 0..n {
                cache.extend_from_slice(&qkv[r * 3 * d + d..(r + 1) * 3 * d]);
            }
            kernels::attention_segment(
                MatView::new(qkv, 3 * d, 0),
                0,
                n,
                MatView::new(cache, 2 * d, 0),
                MatView::new(cache, 2 * d, d),
                0,
                total,
                heads,
                dh,
                &mask.key_mask(),
                att,
                d,
                0,
                None,
                scores,
            )
        })?;
        self.steps = total;
        self.last_position = new.positions().last().copied();
        let v = m.config.vocab_size;
        let mut logits = vec![T::zero(); n * v];
        m.logits_into(b.h, n, &mut logits);
        Tensor::new(vec![n, v], logits)
    }
}
