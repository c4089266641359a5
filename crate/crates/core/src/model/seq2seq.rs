use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::TokenId;
use crate::error::{Error, Result};
use crate::model::{positional_encoding_into, MaskMode, ModelConfig};
use crate::numerics::checkpoint::{read_archive, write_archive};
use crate::numerics::{AttentionLayout, Graph, ParamId, ParamStore, Tensor, Var, LAYER_NORM_EPS};

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayerIds {
    pub ln1: Norm,
    pub qkv: Dense,
    pub attn_out: Dense,
    pub ln2: Norm,
    pub fc1: Dense,
    pub fc2: Dense,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderLayerIds {
    pub ln1: Norm,
    pub qkv: Dense,
    pub attn_out: Dense,
    pub ln2: Norm,
    pub cross_q: Dense,
    pub cross_kv: Dense,
    pub cross_out: Dense,
    pub ln3: Norm,
    pub fc1: Dense,
    pub fc2: Dense,
}

/// Parameter handles of the full network.
#[derive(Clone, Debug)]
pub struct ParamIds {
    pub enc_embed: ParamId,
    pub enc_layers: Vec<EncoderLayerIds>,
    pub enc_norm: Norm,
    /// Decoder input embedding, also the output projection.
    pub dec_embed: ParamId,
    pub dec_layers: Vec<DecoderLayerIds>,
    pub dec_norm: Norm,
}

/// One decoder sequence in a packed training batch.
#[derive(Clone, Copy, Debug)]
pub struct DecoderSegment<'a> {
    /// Index into the batch's source list.
    pub source: usize,
    pub tokens: &'a [TokenId],
    pub positions: &'a [usize],
    pub mode: MaskMode,
}

/// Encoder plus one decoder whose parameters serve both masking modes.
#[derive(Clone, Debug)]
pub struct Seq2Seq {
    config: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
}

struct Init<'r> {
    rng: &'r mut ChaCha8Rng,
    store: ParamStore,
}

impl Init<'_> {
    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.store.add(name, Tensor::new(shape.to_vec(), data).unwrap())
    }

    fn constant(&mut self, name: String, shape: &[usize], v: f64) -> ParamId {
        let n = shape.iter().product();
        self.store.add(name, Tensor::new(shape.to_vec(), vec![v; n]).unwrap())
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm {
            gain: self.constant(format!("{prefix}.gain"), &[d], 1.0),
            bias: self.constant(format!("{prefix}.bias"), &[d], 0.0),
        }
    }

    /// Xavier-uniform weight `[din, dout]`; `parts` splits packed outputs
    /// so each projection gets its own fan-out.
    fn dense(&mut self, prefix: &str, din: usize, dout: usize, parts: usize) -> Dense {
        let bound = (6.0 / (din + dout / parts) as f64).sqrt();
        Dense {
            weight: self.uniform(format!("{prefix}.weight"), &[din, dout], bound),
            bias: self.constant(format!("{prefix}.bias"), &[dout], 0.0),
        }
    }
}

impl Seq2Seq {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            rng: &mut rng,
            store: ParamStore::new(),
        };
        let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
        // Uniform with the variance of N(0, 1/d).
        let emb_bound = (3.0 / d as f64).sqrt();
        let enc_embed = init.uniform("encoder.embed.weight".into(), &[v, d], emb_bound);
        let enc_layers = (0..config.enc_layers)
            .map(|i| {
                let p = format!("encoder.layers.{i}");
                EncoderLayerIds {
                    ln1: init.norm(&format!("{p}.ln1"), d),
                    qkv: init.dense(&format!("{p}.self_attn.qkv"), d, 3 * d, 3),
                    attn_out: init.dense(&format!("{p}.self_attn.out"), d, d, 1),
                    ln2: init.norm(&format!("{p}.ln2"), d),
                    fc1: init.dense(&format!("{p}.ffn.fc1"), d, f, 1),
                    fc2: init.dense(&format!("{p}.ffn.fc2"), f, d, 1),
                }
            })
            .collect();
        let enc_norm = init.norm("encoder.final_ln", d);
        let dec_embed = init.uniform("decoder.embed.weight".into(), &[v, d], emb_bound);
        let dec_layers = (0..config.dec_layers)
            .map(|i| {
                let p = format!("decoder.layers.{i}");
                DecoderLayerIds {
                    ln1: init.norm(&format!("{p}.ln1"), d),
                    qkv: init.dense(&format!("{p}.self_attn.qkv"), d, 3 * d, 3),
                    attn_out: init.dense(&format!("{p}.self_attn.out"), d, d, 1),
                    ln2: init.norm(&format!("{p}.ln2"), d),
                    cross_q: init.dense(&format!("{p}.cross_attn.q"), d, d, 1),
                    cross_kv: init.dense(&format!("{p}.cross_attn.kv"), d, 2 * d, 2),
                    cross_out: init.dense(&format!("{p}.cross_attn.out"), d, d, 1),
                    ln3: init.norm(&format!("{p}.ln3"), d),
                    fc1: init.dense(&format!("{p}.ffn.fc1"), d, f, 1),
                    fc2: init.dense(&format!("{p}.ffn.fc2"), f, d, 1),
                }
            })
            .collect();
        let dec_norm = init.norm("decoder.final_ln", d);
        let params = init.store;
        Ok(Self {
            config,
            params,
            ids: ParamIds {
                enc_embed,
                enc_layers,
                enc_norm,
                dec_embed,
                dec_layers,
                dec_norm,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn ids(&self) -> &ParamIds {
        &self.ids
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Parameters read by the decoder in `mode`. Both modes return the
    /// same handles.
    pub fn decoder_params(&self, _mode: MaskMode) -> (&[DecoderLayerIds], ParamId, Norm) {
        (&self.ids.dec_layers, self.ids.dec_embed, self.ids.dec_norm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
        let header = serde_json::to_string(&self.config)?;
        write_archive(BufWriter::new(f), &header, &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::file(path, e))?;
        let (header, values) = read_archive(BufReader::new(f))?;
        let config: ModelConfig = serde_json::from_str(&header)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut model = Self::new(config, 0)?;
        model.params.load_values(&values)?;
        Ok(model)
    }

    /// Loads a checkpoint whose config must equal `expected`.
    pub fn load_matching(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let model = Self::load(path)?;
        if model.config != *expected {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint {:?} vs requested {:?}",
                model.config, expected
            )));
        }
        Ok(model)
    }

    fn positions_input(&self, g: &mut Graph<'_>, positions: impl Iterator<Item = usize>) -> Result<Var> {
        let d = self.config.d_model;
        let mut data = Vec::new();
        let mut n = 0;
        for p in positions {
            if p >= self.config.num_positions() {
                return Err(Error::Overlength {
                    len: p,
                    max: self.config.num_positions() - 1,
                });
            }
            let start = data.len();
            data.resize(start + d, 0.0);
            positional_encoding_into(p, &mut data[start..]);
            n += 1;
        }
        g.input(vec![n, d], data)
    }

    fn norm(&self, g: &mut Graph<'_>, x: Var, n: Norm) -> Result<Var> {
        let (gain, bias) = (g.param(n.gain), g.param(n.bias));
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }

    fn dense(&self, g: &mut Graph<'_>, x: Var, p: Dense) -> Result<Var> {
        let (w, b) = (g.param(p.weight), g.param(p.bias));
        g.linear(x, w, Some(b))
    }

    fn ffn(&self, g: &mut Graph<'_>, x: Var, ln: Norm, fc1: Dense, fc2: Dense) -> Result<Var> {
        let h = self.norm(g, x, ln)?;
        let h = self.dense(g, h, fc1)?;
        let h = g.relu(h)?;
        let h = self.dense(g, h, fc2)?;
        g.add(x, h)
    }

    /// Encodes the sources packed one after another; returns the memory
    /// and each source's `(start_row, len)`.
    pub fn encode_graph(&self, g: &mut Graph<'_>, sources: &[&[TokenId]]) -> Result<(Var, Vec<(usize, usize)>)> {
        let d = self.config.d_model;
        let mut segs = Vec::with_capacity(sources.len());
        let mut ids = Vec::new();
        for s in sources {
            if s.len() > self.config.max_len {
                return Err(Error::Overlength {
                    len: s.len(),
                    max: self.config.max_len,
                });
            }
            segs.push((ids.len(), s.len()));
            ids.extend_from_slice(s);
        }
        let table = g.param(self.ids.enc_embed);
        let emb = g.embed(table, &ids, (d as f64).sqrt())?;
        let pos = self.positions_input(g, segs.iter().flat_map(|&(_, l)| 0..l))?;
        let mut x = g.add(emb, pos)?;
        let layout = AttentionLayout {
            q_segs: segs.clone(),
            k_segs: segs.clone(),
            causal: vec![false; segs.len()],
            key_padding: None,
            heads: self.config.n_heads,
        };
        for l in &self.ids.enc_layers {
            let h = self.norm(g, x, l.ln1)?;
            let qkv = self.dense(g, h, l.qkv)?;
            let a = g.attention((qkv, 0), (qkv, d), (qkv, 2 * d), d, layout.clone())?;
            let a = self.dense(g, a, l.attn_out)?;
            x = g.add(x, a)?;
            x = self.ffn(g, x, l.ln2, l.fc1, l.fc2)?;
        }
        let mem = self.norm(g, x, self.ids.enc_norm)?;
        Ok((mem, segs))
    }

    /// Runs the decoder over packed segments and returns the final hidden
    /// states `[rows, d_model]`.
    pub fn decode_graph(
        &self,
        g: &mut Graph<'_>,
        memory: Var,
        src_segs: &[(usize, usize)],
        segments: &[DecoderSegment<'_>],
    ) -> Result<Var> {
        let d = self.config.d_model;
        let mut q_segs = Vec::with_capacity(segments.len());
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        for s in segments {
            if s.tokens.len() != s.positions.len() {
                return Err(Error::LengthMismatch(format!(
                    "{} tokens, {} positions",
                    s.tokens.len(),
                    s.positions.len()
                )));
            }
            if s.positions.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::PositionOrder(format!("{:?}", s.positions)));
            }
            q_segs.push((ids.len(), s.tokens.len()));
            ids.extend_from_slice(s.tokens);
            positions.extend_from_slice(s.positions);
        }
        let table = g.param(self.ids.dec_embed);
        let emb = g.embed(table, &ids, (d as f64).sqrt())?;
        let pos = self.positions_input(g, positions.into_iter())?;
        let mut x = g.add(emb, pos)?;
        let self_layout = AttentionLayout {
            q_segs: q_segs.clone(),
            k_segs: q_segs.clone(),
            causal: segments.iter().map(|s| s.mode == MaskMode::Causal).collect(),
            key_padding: None,
            heads: self.config.n_heads,
        };
        let cross_layout = AttentionLayout {
            q_segs,
            k_segs: segments.iter().map(|s| src_segs[s.source]).collect(),
            causal: vec![false; segments.len()],
            key_padding: None,
            heads: self.config.n_heads,
        };
        for l in &self.ids.dec_layers {
            let h = self.norm(g, x, l.ln1)?;
            let qkv = self.dense(g, h, l.qkv)?;
            let a = g.attention((qkv, 0), (qkv, d), (qkv, 2 * d), d, self_layout.clone())?;
            let a = self.dense(g, a, l.attn_out)?;
            x = g.add(x, a)?;
            let h = self.norm(g, x, l.ln2)?;
            let q = self.dense(g, h, l.cross_q)?;
            let kv = self.dense(g, memory, l.cross_kv)?;
            let a = g.attention((q, 0), (kv, 0), (kv, d), d, cross_layout.clone())?;
            let a = self.dense(g, a, l.cross_out)?;
            x = g.add(x, a)?;
            x = self.ffn(g, x, l.ln3, l.fc1, l.fc2)?;
        }
        self.norm(g, x, self.ids.dec_norm)
    }

    /// Output logits for selected hidden rows, via the tied embedding.
    pub fn logits_graph(&self, g: &mut Graph<'_>, hidden: Var, rows: &[usize]) -> Result<Var> {
        let h = g.select_rows(hidden, rows)?;
        let table = g.param(self.ids.dec_embed);
        g.matmul(h, table, true)
    }

    /// Full forward pass: logits `[rows.len(), vocab]` for the given packed
    /// decoder rows.
    pub fn forward_graph(
        &self,
        g: &mut Graph<'_>,
        sources: &[&[TokenId]],
        segments: &[DecoderSegment<'_>],
        rows: &[usize],
    ) -> Result<Var> {
        let (mem, src_segs) = self.encode_graph(g, sources)?;
        let hidden = self.decode_graph(g, mem, &src_segs, segments)?;
        self.logits_graph(g, hidden, rows)
    }

    /// Logits for every input position of one sequence, evaluated on the
    /// training graph. Used as a reference by tests and oracles.
    pub fn reference_logits(&self, source: &[TokenId], tokens: &[TokenId], positions: &[usize], mode: MaskMode) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let seg = DecoderSegment {
            source: 0,
            tokens,
            positions,
            mode,
        };
        let rows: Vec<usize> = (0..tokens.len()).collect();
        let out = self.forward_graph(&mut g, &[source], &[seg], &rows)?;
        Tensor::new(g.shape(out).to_vec(), g.value(out).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            d_ff: 32,
            n_heads: 2,
            enc_layers: 2,
            dec_layers: 1,
            vocab_size: 12,
            max_len: 10,
            chunk_sizes: vec![2, 3, 4],
        }
    }

    #[test]
    fn parameter_names_are_hierarchical() {
        let m = Seq2Seq::new(tiny(), 1).unwrap();
        assert!(m.params().id("encoder.layers.1.self_attn.qkv.weight").is_some());
        assert!(m.params().id("decoder.layers.0.cross_attn.kv.bias").is_some());
        assert!(m.params().id("decoder.final_ln.gain").is_some());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Seq2Seq::new(tiny(), 3).unwrap();
        m.save(&path).unwrap();
        let back = Seq2Seq::load(&path).unwrap();
        assert_eq!(back.config(), m.config());
        for (a, b) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        let other = ModelConfig {
            enc_layers: 3,
            ..tiny()
        };
        assert!(matches!(
            Seq2Seq::load_matching(&path, &other),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn overlength_source_is_rejected() {
        let m = Seq2Seq::new(tiny(), 3).unwrap();
        let src = vec![8u32; 11];
        assert!(matches!(
            m.reference_logits(&src, &[1], &[0], MaskMode::Causal),
            Err(Error::Overlength { len: 11, max: 10 })
        ));
    }
}
