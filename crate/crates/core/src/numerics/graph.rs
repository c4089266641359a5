//! Tape-based reverse-mode differentiation over `f64` tensors.
//!
//! Each operation appends a node holding its forward value. `backward`
//! walks the tape in reverse and returns gradients for every parameter
//! reachable from the loss.

use crate::error::{Error, Result};
use crate::numerics::kernels::{self, KeyMask, MatView};
use crate::numerics::{Gradients, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Segment layout for a batched attention call. Query segment `s` attends
/// only to key segment `s`.
#[derive(Clone, Debug, Default)]
pub struct AttentionLayout {
    /// `(start_row, len)` per segment in the query matrix.
    pub q_segs: Vec<(usize, usize)>,
    /// `(start_row, len)` per segment in the key/value matrix.
    pub k_segs: Vec<(usize, usize)>,
    /// Causal masking per segment.
    pub causal: Vec<bool>,
    /// Padding flags over all key rows.
    pub key_padding: Option<Vec<bool>>,
    pub heads: usize,
}

impl AttentionLayout {
    fn key_mask(&self, s: usize) -> KeyMask<'_> {
        let (ks, kl) = self.k_segs[s];
        KeyMask {
            causal_offset: if self.causal[s] { Some(0) } else { None },
            padding: self.key_padding.as_deref().map(|p| &p[ks..ks + kl]),
        }
    }
}

struct AttentionNode {
    q: (Var, usize),
    k: (Var, usize),
    v: (Var, usize),
    width: usize,
    layout: AttentionLayout,
    /// Per segment `[heads, lq, lk]` weights.
    probs: Vec<Vec<f64>>,
}

enum Op {
    Input,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, stats: Vec<f64> },
    Embed { table: Var, ids: Vec<u32>, scale: f64 },
    SelectRows { x: Var, rows: Vec<usize> },
    Attention(Box<AttentionNode>),
    CrossEntropy { logits: Var, targets: Vec<u32>, weights: Vec<f64>, probs: Vec<f64> },
    Sum(Var),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn cols(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

fn rows(shape: &[usize]) -> usize {
    shape.iter().product::<usize>().checked_div(cols(shape)).unwrap_or(0)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.value(id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !kernels::all_finite(&value) {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(Error::shape("input", format!("{shape:?} vs {} values", value.len())));
        }
        self.push(shape, value, Op::Input, false, "input")
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let shape = self.params.value(id).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Vec::new(),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x·w + b` with `x: [n, din]`, `w: [din, dout]`, `b: [dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.len() != 2 || cols(xs) != ws[0] {
            return Err(Error::shape("linear", format!("{xs:?} x {ws:?}")));
        }
        let (n, dout) = (rows(xs), ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::shape("linear", "bias width"));
            }
        }
        let mut out = vec![0.0; n * dout];
        kernels::gemm(n, dout, ws[0], self.value(x), false, self.value(w), false, &mut out, false);
        if let Some(b) = b {
            kernels::add_bias_rows(&mut out, self.value(b));
        }
        let mut shape = xs[..xs.len() - 1].to_vec();
        shape.push(dout);
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(shape, out, Op::Linear { x, w, b }, needs, "linear")
    }

    /// Matrix product of two matrices; `b` is used transposed when `trans_b`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape("matmul", "operands must be matrices"));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})")));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, n, k, self.value(a), false, self.value(b), trans_b, &mut out, false);
        let needs = self.needs(a) || self.needs(b);
        self.push(vec![m, n], out, Op::MatMul { a, b, trans_b }, needs, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", format!("{:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(self.shape(a).to_vec(), out, Op::Add(a, b), needs, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", format!("{:?} * {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), needs, "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x * s).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, s), needs, "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), out, Op::Relu(a), needs, "relu")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        let needs = self.needs(a);
        self.push(vec![1], vec![s], Op::Sum(a), needs, "sum")
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = cols(self.shape(x));
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::shape("layer_norm", "gain/bias width"));
        }
        let n = rows(self.shape(x));
        let mut out = vec![0.0; n * d];
        let mut stats = vec![0.0; 2 * n];
        kernels::layer_norm(self.value(x), self.value(gain), self.value(bias), eps, &mut out, Some(&mut stats));
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm { x, gain, bias, stats },
            needs,
            "layer_norm",
        )
    }

    /// Row lookup `table[ids[r]] * scale`.
    pub fn embed(&mut self, table: Var, ids: &[u32], scale: f64) -> Result<Var> {
        let ts = self.shape(table);
        if ts.len() != 2 {
            return Err(Error::shape("embed", "table must be a matrix"));
        }
        let (vocab, d) = (ts[0], ts[1]);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            if id >= vocab {
                return Err(Error::shape("embed", format!("id {id} >= vocab {vocab}")));
            }
            out.extend(tv[id * d..(id + 1) * d].iter().map(|v| v * scale));
        }
        let needs = self.needs(table);
        self.push(
            vec![ids.len(), d],
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
                scale,
            },
            needs,
            "embed",
        )
    }

    pub fn select_rows(&mut self, x: Var, rows_idx: &[usize]) -> Result<Var> {
        let d = cols(self.shape(x));
        let n = rows(self.shape(x));
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows_idx.len() * d);
        for &r in rows_idx {
            if r >= n {
                return Err(Error::shape("select_rows", format!("row {r} >= {n}")));
            }
            out.extend_from_slice(&xv[r * d..(r + 1) * d]);
        }
        let needs = self.needs(x);
        self.push(
            vec![rows_idx.len(), d],
            out,
            Op::SelectRows {
                x,
                rows: rows_idx.to_vec(),
            },
            needs,
            "select_rows",
        )
    }

    /// Segmented multi-head attention. `q`, `k` and `v` are `(node, column
    /// offset)` pairs so packed projections can be addressed directly; the
    /// output has `width` columns.
    pub fn attention(
        &mut self,
        q: (Var, usize),
        k: (Var, usize),
        v: (Var, usize),
        width: usize,
        layout: AttentionLayout,
    ) -> Result<Var> {
        let heads = layout.heads;
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::shape("attention", "width not divisible by heads"));
        }
        let nseg = layout.q_segs.len();
        if layout.k_segs.len() != nseg || layout.causal.len() != nseg {
            return Err(Error::shape("attention", "segment lists differ in length"));
        }
        let dh = width / heads;
        let (qs, ks, vs) = (self.shape(q.0), self.shape(k.0), self.shape(v.0));
        if cols(qs) < q.1 + width || cols(ks) < k.1 + width || cols(vs) < v.1 + width {
            return Err(Error::shape("attention", "column window out of range"));
        }
        let nq = rows(qs);
        let nk = rows(ks);
        if rows(vs) != nk {
            return Err(Error::shape("attention", "k and v row counts differ"));
        }
        let qv = MatView::new(self.value(q.0), cols(qs), q.1);
        let kv = MatView::new(self.value(k.0), cols(ks), k.1);
        let vv = MatView::new(self.value(v.0), cols(vs), v.1);
        let mut out = vec![0.0; nq * width];
        let mut probs = Vec::with_capacity(nseg);
        let max_lk = layout.k_segs.iter().map(|s| s.1).max().unwrap_or(0);
        let mut scores = vec![0.0; max_lk];
        for s in 0..nseg {
            let (q0, lq) = layout.q_segs[s];
            let (k0, lk) = layout.k_segs[s];
            if q0 + lq > nq || k0 + lk > nk {
                return Err(Error::shape("attention", format!("segment {s} out of range")));
            }
            let mut p = vec![0.0; heads * lq * lk];
            kernels::attention_segment(
                qv,
                q0,
                lq,
                kv,
                vv,
                k0,
                lk,
                heads,
                dh,
                &layout.key_mask(s),
                &mut out,
                width,
                q0,
                Some(&mut p),
                &mut scores,
            )?;
            probs.push(p);
        }
        let needs = self.needs(q.0) || self.needs(k.0) || self.needs(v.0);
        self.push(
            vec![nq, width],
            out,
            Op::Attention(Box::new(AttentionNode {
                q,
                k,
                v,
                width,
                layout,
                probs,
            })),
            needs,
            "attention",
        )
    }

    /// Weighted sum of per-row negative log-likelihoods. Rows with weight
    /// zero contribute nothing to the value or the gradient.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], weights: &[f64]) -> Result<Var> {
        let vsz = cols(self.shape(logits));
        let n = rows(self.shape(logits));
        if targets.len() != n || weights.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{n} rows, {} targets, {} weights", targets.len(), weights.len()),
            ));
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; n * vsz];
        let mut loss = 0.0;
        for r in 0..n {
            if weights[r] == 0.0 {
                continue;
            }
            let t = targets[r] as usize;
            if t >= vsz {
                return Err(Error::shape("cross_entropy", format!("target {t} >= vocab {vsz}")));
            }
            let row = &lv[r * vsz..(r + 1) * vsz];
            let pr = &mut probs[r * vsz..(r + 1) * vsz];
            pr.copy_from_slice(row);
            kernels::softmax_inplace(pr);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            loss += weights[r] * (lse - row[t]);
        }
        let needs = self.needs(logits);
        self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            needs,
            "cross_entropy",
        )
    }

    /// Mean NLL over rows whose mask bit is set.
    pub fn cross_entropy_masked(&mut self, logits: Var, targets: &[u32], loss_mask: &[bool]) -> Result<Var> {
        let count = loss_mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyLossMask);
        }
        let w = 1.0 / count as f64;
        let weights: Vec<f64> = loss_mask.iter().map(|&m| if m { w } else { 0.0 }).collect();
        self.cross_entropy(logits, targets, &weights)
    }

    /// Reverse pass from a scalar `loss`. Consumes the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::with_len(self.params.len());
        let mut reached = false;
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    out.add(*id, &g);
                    reached = true;
                }
                Op::Linear { x, w, b } => {
                    let ws = self.shape(*w);
                    let (din, dout) = (ws[0], ws[1]);
                    let n = rows(&node.shape);
                    if self.needs(*x) {
                        let dx = slot(&mut grads, &self.nodes, *x);
                        kernels::gemm(n, din, dout, &g, false, self.value(*w), true, dx, true);
                    }
                    if self.needs(*w) {
                        let dw = slot(&mut grads, &self.nodes, *w);
                        kernels::gemm(din, dout, n, self.value(*x), true, &g, false, dw, true);
                    }
                    if let Some(b) = b {
                        if self.needs(*b) {
                            let db = slot(&mut grads, &self.nodes, *b);
                            for row in g.chunks_exact(dout) {
                                kernels::axpy(1.0, row, db);
                            }
                        }
                    }
                }
                Op::MatMul { a, b, trans_b } => {
                    let sa = self.shape(*a);
                    let (m, k) = (sa[0], sa[1]);
                    let n = node.shape[1];
                    if self.needs(*a) {
                        let da = slot(&mut grads, &self.nodes, *a);
                        // da = g · op(b)ᵀ
                        kernels::gemm(m, k, n, &g, false, self.value(*b), !*trans_b, da, true);
                    }
                    if self.needs(*b) {
                        let db = slot(&mut grads, &self.nodes, *b);
                        if *trans_b {
                            // b is [n, k]: db = gᵀ · a
                            kernels::gemm(n, k, m, &g, true, self.value(*a), false, db, true);
                        } else {
                            kernels::gemm(k, n, m, self.value(*a), true, &g, false, db, true);
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.needs(v) {
                            kernels::axpy(1.0, &g, slot(&mut grads, &self.nodes, v));
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let bv = self.value(*b).to_vec();
                        let da = slot(&mut grads, &self.nodes, *a);
                        for ((d, gi), bi) in da.iter_mut().zip(&g).zip(&bv) {
                            *d += gi * bi;
                        }
                    }
                    if self.needs(*b) {
                        let av = self.value(*a).to_vec();
                        let db = slot(&mut grads, &self.nodes, *b);
                        for ((d, gi), ai) in db.iter_mut().zip(&g).zip(&av) {
                            *d += gi * ai;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    kernels::axpy(*s, &g, slot(&mut grads, &self.nodes, *a));
                }
                Op::Relu(a) => {
                    let da = slot(&mut grads, &self.nodes, *a);
                    for ((d, gi), y) in da.iter_mut().zip(&g).zip(&node.value) {
                        if *y > 0.0 {
                            *d += gi;
                        }
                    }
                }
                Op::Sum(a) => {
                    let da = slot(&mut grads, &self.nodes, *a);
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
                Op::LayerNorm { x, gain, bias, stats } => {
                    let d = cols(&node.shape);
                    let xv = self.value(*x);
                    let gv = self.value(*gain);
                    let n = rows(&node.shape);
                    let mut dx = vec![0.0; n * d];
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    let mut xhat = vec![0.0; d];
                    let mut dxhat = vec![0.0; d];
                    for r in 0..n {
                        let (mean, rstd) = (stats[2 * r], stats[2 * r + 1]);
                        let gr = &g[r * d..(r + 1) * d];
                        let xr = &xv[r * d..(r + 1) * d];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for i in 0..d {
                            xhat[i] = (xr[i] - mean) * rstd;
                            dxhat[i] = gr[i] * gv[i];
                            dg[i] += gr[i] * xhat[i];
                            db[i] += gr[i];
                            m1 += dxhat[i];
                            m2 += dxhat[i] * xhat[i];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for i in 0..d {
                            dx[r * d + i] = rstd * (dxhat[i] - m1 - xhat[i] * m2);
                        }
                    }
                    for (v, dv) in [(*x, dx), (*gain, dg), (*bias, db)] {
                        if self.needs(v) {
                            kernels::axpy(1.0, &dv, slot(&mut grads, &self.nodes, v));
                        }
                    }
                }
                Op::Embed { table, ids, scale } => {
                    let d = cols(&node.shape);
                    let dt = slot(&mut grads, &self.nodes, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        let id = id as usize;
                        kernels::axpy(*scale, &g[r * d..(r + 1) * d], &mut dt[id * d..(id + 1) * d]);
                    }
                }
                Op::SelectRows { x, rows: idx } => {
                    let d = cols(&node.shape);
                    let dx = slot(&mut grads, &self.nodes, *x);
                    for (r, &src) in idx.iter().enumerate() {
                        kernels::axpy(1.0, &g[r * d..(r + 1) * d], &mut dx[src * d..(src + 1) * d]);
                    }
                }
                Op::Attention(att) => {
                    self.attention_backward(att, &g, &mut grads);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let vsz = cols(self.shape(*logits));
                    let dl = slot(&mut grads, &self.nodes, *logits);
                    for (r, &w) in weights.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let scale = g[0] * w;
                        let dr = &mut dl[r * vsz..(r + 1) * vsz];
                        kernels::axpy(scale, &probs[r * vsz..(r + 1) * vsz], dr);
                        dr[targets[r] as usize] -= scale;
                    }
                }
            }
        }
        if !reached {
            return Err(Error::DetachedGraph);
        }
        for (_, g) in out.iter() {
            if !kernels::all_finite(g) {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(out)
    }

    fn attention_backward(&self, att: &AttentionNode, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let layout = &att.layout;
        let heads = layout.heads;
        let width = att.width;
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qv = MatView::new(self.value(att.q.0), cols(self.shape(att.q.0)), att.q.1);
        let kv = MatView::new(self.value(att.k.0), cols(self.shape(att.k.0)), att.k.1);
        let vv = MatView::new(self.value(att.v.0), cols(self.shape(att.v.0)), att.v.1);
        let nq = rows(self.shape(att.q.0));
        let nk = rows(self.shape(att.k.0));
        let mut dq = vec![0.0; nq * width];
        let mut dk = vec![0.0; nk * width];
        let mut dv = vec![0.0; nk * width];
        let max_lk = layout.k_segs.iter().map(|s| s.1).max().unwrap_or(0);
        let mut ds = vec![0.0; max_lk];
        for (s, p) in att.probs.iter().enumerate() {
            let (q0, lq) = layout.q_segs[s];
            let (k0, lk) = layout.k_segs[s];
            for h in 0..heads {
                for i in 0..lq {
                    let pr = &p[(h * lq + i) * lk..][..lk];
                    let go = &g[(q0 + i) * width + h * dh..][..dh];
                    let mut dot_pp = 0.0;
                    for j in 0..lk {
                        if pr[j] == 0.0 {
                            ds[j] = 0.0;
                            continue;
                        }
                        let dp = kernels::dot(go, vv.head(k0 + j, h, dh));
                        ds[j] = dp;
                        dot_pp += dp * pr[j];
                        kernels::axpy(pr[j], go, &mut dv[(k0 + j) * width + h * dh..][..dh]);
                    }
                    let qh = qv.head(q0 + i, h, dh);
                    let dqi = &mut dq[(q0 + i) * width + h * dh..][..dh];
                    for j in 0..lk {
                        if pr[j] == 0.0 {
                            continue;
                        }
                        let dsj = pr[j] * (ds[j] - dot_pp) * scale;
                        kernels::axpy(dsj, kv.head(k0 + j, h, dh), dqi);
                        kernels::axpy(dsj, qh, &mut dk[(k0 + j) * width + h * dh..][..dh]);
                    }
                }
            }
        }
        for ((var, off), dense) in [(att.q, dq), (att.k, dk), (att.v, dv)] {
            if !self.needs(var) {
                continue;
            }
            let c = cols(self.shape(var));
            let dst = slot(grads, &self.nodes, var);
            for (r, row) in dense.chunks_exact(width).enumerate() {
                kernels::axpy(1.0, row, &mut dst[r * c + off..r * c + off + width]);
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    let n: usize = nodes[v.0].shape.iter().product();
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}
