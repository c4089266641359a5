//! Finite-difference gradient checks for every parameterized layer.

use hrt::data::TokenId;
use hrt::model::{DecoderSegment, MaskMode, ModelConfig, Seq2Seq};
use hrt::numerics::{AttentionLayout, Graph, ParamId, ParamStore, Tensor, Var, LAYER_NORM_EPS};
use hrt::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SHAPES_PER_LAYER: usize = 5;
const EPS: f64 = 1e-6;

pub struct LayerReport {
    pub layer: &'static str,
    pub shapes: usize,
    pub max_rel_err: f64,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// `||analytic - numeric|| / (||analytic|| + ||numeric||)` maximized over
/// the parameters in `ids`; central differences on every scalar.
fn check<F>(store: &mut ParamStore, ids: &[ParamId], build: F) -> f64
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::new(store);
        let loss = build(&mut g).unwrap();
        g.backward(loss).unwrap()
    };
    let eval = |store: &ParamStore| {
        let mut g = Graph::new(store);
        let loss = build(&mut g).unwrap();
        g.scalar(loss)
    };
    let mut worst: f64 = 0.0;
    for &id in ids {
        let n = store.value(id).len();
        let analytic: Vec<f64> = grads.get(id).map_or(vec![0.0; n], |g| g.to_vec());
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + EPS;
            let up = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig - EPS;
            let down = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * EPS);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = if na + nn < 1e-12 { diff } else { diff / (na + nn) };
        worst = worst.max(rel);
    }
    worst
}

/// Weighted sum of `out` with fixed random weights, so every output
/// element carries a distinct gradient.
fn probe(g: &mut Graph, out: Var, rng_seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = shape.iter().product();
    let w = g.input(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn linear_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, din, dout) = (rng.gen_range(1..6), rng.gen_range(1..7), rng.gen_range(1..7));
    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(rng, &[n, din], 1.0));
    let w = s.add("w", random_tensor(rng, &[din, dout], 1.0));
    let b = s.add("b", random_tensor(rng, &[dout], 1.0));
    let seed = rng.gen();
    check(&mut s, &[x, w, b], |g| {
        let (xv, wv, bv) = (g.param(x), g.param(w), g.param(b));
        let y = g.linear(xv, wv, Some(bv))?;
        probe(g, y, seed)
    })
}

fn layer_norm_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, d) = (rng.gen_range(1..6), rng.gen_range(2..9));
    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(rng, &[n, d], 2.0));
    let gain = s.add("g", random_tensor(rng, &[d], 1.5));
    let bias = s.add("b", random_tensor(rng, &[d], 1.0));
    let seed = rng.gen();
    check(&mut s, &[x, gain, bias], |g| {
        let (xv, gv, bv) = (g.param(x), g.param(gain), g.param(bias));
        let y = g.layer_norm(xv, gv, bv, LAYER_NORM_EPS)?;
        probe(g, y, seed)
    })
}

fn embedding_case(rng: &mut ChaCha8Rng) -> f64 {
    let (vocab, d, n) = (rng.gen_range(2..9), rng.gen_range(1..7), rng.gen_range(1..10));
    let ids: Vec<u32> = (0..n).map(|_| rng.gen_range(0..vocab as u32)).collect();
    let scale = rng.gen_range(0.5..3.0);
    let mut s = ParamStore::new();
    let t = s.add("table", random_tensor(rng, &[vocab, d], 1.0));
    let seed = rng.gen();
    check(&mut s, &[t], |g| {
        let tv = g.param(t);
        let y = g.embed(tv, &ids, scale)?;
        probe(g, y, seed)
    })
}

/// Splits `n` rows into 1..=3 contiguous segments.
fn segments(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let parts = rng.gen_range(1..=3.min(n));
    let mut cuts: Vec<usize> = (1..n).collect();
    let mut chosen = Vec::new();
    for _ in 1..parts {
        let i = rng.gen_range(0..cuts.len());
        chosen.push(cuts.swap_remove(i));
    }
    chosen.sort();
    let mut out = Vec::new();
    let mut start = 0;
    for c in chosen.into_iter().chain(std::iter::once(n)) {
        out.push((start, c - start));
        start = c;
    }
    out
}

fn self_attention_case(rng: &mut ChaCha8Rng) -> f64 {
    let heads = rng.gen_range(1..=3);
    let d = heads * rng.gen_range(1..=3);
    let n = rng.gen_range(2..8);
    let segs = segments(rng, n);
    let causal: Vec<bool> = segs.iter().map(|_| rng.gen()).collect();
    let mut padding = vec![false; n];
    for (i, &(s0, len)) in segs.iter().enumerate() {
        if !causal[i] && len >= 2 {
            padding[s0 + len - 1] = true;
        }
    }
    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(rng, &[n, d], 1.0));
    let wqkv = s.add("qkv.w", random_tensor(rng, &[d, 3 * d], 1.0));
    let bqkv = s.add("qkv.b", random_tensor(rng, &[3 * d], 0.5));
    let wo = s.add("out.w", random_tensor(rng, &[d, d], 1.0));
    let bo = s.add("out.b", random_tensor(rng, &[d], 0.5));
    let seed = rng.gen();
    check(&mut s, &[x, wqkv, bqkv, wo, bo], |g| {
        let (xv, w, b) = (g.param(x), g.param(wqkv), g.param(bqkv));
        let qkv = g.linear(xv, w, Some(b))?;
        let layout = AttentionLayout {
            q_segs: segs.clone(),
            k_segs: segs.clone(),
            causal: causal.clone(),
            key_padding: Some(padding.clone()),
            heads,
        };
        let a = g.attention((qkv, 0), (qkv, d), (qkv, 2 * d), d, layout)?;
        let (w, b) = (g.param(wo), g.param(bo));
        let y = g.linear(a, w, Some(b))?;
        probe(g, y, seed)
    })
}

fn cross_attention_case(rng: &mut ChaCha8Rng) -> f64 {
    let heads = rng.gen_range(1..=3);
    let d = heads * rng.gen_range(1..=3);
    let nseg = rng.gen_range(1..=2);
    let mut q_segs = Vec::new();
    let mut k_segs = Vec::new();
    let (mut nq, mut nk) = (0, 0);
    for _ in 0..nseg {
        let (lq, lk) = (rng.gen_range(1..5), rng.gen_range(1..5));
        q_segs.push((nq, lq));
        k_segs.push((nk, lk));
        nq += lq;
        nk += lk;
    }
    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(rng, &[nq, d], 1.0));
    let mem = s.add("memory", random_tensor(rng, &[nk, d], 1.0));
    let wq = s.add("q.w", random_tensor(rng, &[d, d], 1.0));
    let bq = s.add("q.b", random_tensor(rng, &[d], 0.5));
    let wkv = s.add("kv.w", random_tensor(rng, &[d, 2 * d], 1.0));
    let bkv = s.add("kv.b", random_tensor(rng, &[2 * d], 0.5));
    let wo = s.add("out.w", random_tensor(rng, &[d, d], 1.0));
    let seed = rng.gen();
    check(&mut s, &[x, mem, wq, bq, wkv, bkv, wo], |g| {
        let (xv, mv) = (g.param(x), g.param(mem));
        let (w, b) = (g.param(wq), g.param(bq));
        let q = g.linear(xv, w, Some(b))?;
        let (w, b) = (g.param(wkv), g.param(bkv));
        let kv = g.linear(mv, w, Some(b))?;
        let layout = AttentionLayout {
            q_segs: q_segs.clone(),
            k_segs: k_segs.clone(),
            causal: vec![false; nseg],
            key_padding: None,
            heads,
        };
        let a = g.attention((q, 0), (kv, 0), (kv, d), d, layout)?;
        let w = g.param(wo);
        let y = g.linear(a, w, None)?;
        probe(g, y, seed)
    })
}

fn feed_forward_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, d, dff) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(2..9));
    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(rng, &[n, d], 1.0));
    let w1 = s.add("fc1.w", random_tensor(rng, &[d, dff], 1.0));
    let b1 = s.add("fc1.b", random_tensor(rng, &[dff], 1.0));
    let w2 = s.add("fc2.w", random_tensor(rng, &[dff, d], 1.0));
    let b2 = s.add("fc2.b", random_tensor(rng, &[d], 1.0));
    let seed = rng.gen();
    check(&mut s, &[x, w1, b1, w2, b2], |g| {
        let xv = g.param(x);
        let (w, b) = (g.param(w1), g.param(b1));
        let h = g.linear(xv, w, Some(b))?;
        let h = g.relu(h)?;
        let (w, b) = (g.param(w2), g.param(b2));
        let y = g.linear(h, w, Some(b))?;
        let y = g.add(y, xv)?;
        probe(g, y, seed)
    })
}

/// Tied output projection followed by weighted cross-entropy.
fn output_projection_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, d, vocab) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(2..9));
    let targets: Vec<u32> = (0..n).map(|_| rng.gen_range(0..vocab as u32)).collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let mut s = ParamStore::new();
    let h = s.add("h", random_tensor(rng, &[n, d], 1.0));
    let table = s.add("embed", random_tensor(rng, &[vocab, d], 1.0));
    check(&mut s, &[h, table], |g| {
        let (hv, tv) = (g.param(h), g.param(table));
        let logits = g.matmul(hv, tv, true)?;
        g.cross_entropy(logits, &targets, &weights)
    })
}

/// The whole encoder-decoder under all four decoder input styles at once.
fn full_model_case(rng: &mut ChaCha8Rng) -> f64 {
    let heads = rng.gen_range(1..=2);
    let config = ModelConfig {
        d_model: 4 * heads,
        d_ff: rng.gen_range(4..10),
        n_heads: heads,
        enc_layers: rng.gen_range(1..=2),
        dec_layers: 1,
        vocab_size: 10,
        max_len: 8,
        chunk_sizes: vec![2, 3],
    };
    let mut model = Seq2Seq::new(config, rng.gen()).unwrap();
    for p in model.params_mut().iter_mut() {
        let n = p.value.len();
        let jitter: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
        for (v, j) in p.value.data_mut().iter_mut().zip(jitter) {
            *v += j;
        }
    }
    let src: Vec<Vec<TokenId>> = (0..2)
        .map(|_| (0..rng.gen_range(1..6)).map(|_| rng.gen_range(6..10)).collect())
        .collect();
    let inputs: Vec<(Vec<TokenId>, Vec<usize>, MaskMode)> = vec![
        (vec![0, 7, 8], vec![0, 1, 2], MaskMode::Causal),
        (vec![3, 7, 3, 9], vec![1, 2, 3, 4], MaskMode::Full),
        (vec![4, 8], vec![0, 2], MaskMode::Causal),
        (vec![3, 6, 3, 1], vec![1, 2, 3, 4], MaskMode::Full),
    ];
    let rows: Vec<usize> = (0..13).filter(|_| rng.gen_bool(0.7)).collect();
    let rows = if rows.is_empty() { vec![0] } else { rows };
    let targets: Vec<u32> = rows.iter().map(|_| rng.gen_range(1..10)).collect();
    let weights = vec![1.0 / rows.len() as f64; rows.len()];
    let ids: Vec<ParamId> = (0..model.params().len()).map(ParamId).collect();
    let srcs: Vec<&[TokenId]> = src.iter().map(|s| s.as_slice()).collect();
    let model_ref = model.clone();
    let mut store = model.params().clone();
    check(&mut store, &ids, |g| {
        let segs: Vec<DecoderSegment> = inputs
            .iter()
            .enumerate()
            .map(|(i, (t, p, m))| DecoderSegment {
                source: i / 2,
                tokens: t,
                positions: p,
                mode: *m,
            })
            .collect();
        let logits = model_ref.forward_graph(g, &srcs, &segs, &rows)?;
        g.cross_entropy(logits, &targets, &weights)
    })
}

type LayerCase = (&'static str, fn(&mut ChaCha8Rng) -> f64);

/// Runs every layer check on [`SHAPES_PER_LAYER`] random shapes.
pub fn gradient_suite(seed: u64) -> Vec<LayerReport> {
    let cases: [LayerCase; 8] = [
        ("linear", linear_case),
        ("layer_norm", layer_norm_case),
        ("embedding", embedding_case),
        ("self_attention", self_attention_case),
        ("cross_attention", cross_attention_case),
        ("feed_forward", feed_forward_case),
        ("output_projection", output_projection_case),
        ("encoder_decoder", full_model_case),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases
        .iter()
        .map(|&(layer, f)| {
            let max_rel_err = (0..SHAPES_PER_LAYER).map(|_| f(&mut rng)).fold(0.0, f64::max);
            LayerReport {
                layer,
                shapes: SHAPES_PER_LAYER,
                max_rel_err,
            }
        })
        .collect()
}
