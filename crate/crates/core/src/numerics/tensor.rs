use crate::error::{Error, Result};
use crate::numerics::kernels::{self, MatView};
use crate::numerics::Scalar;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        if !kernels::all_finite(&data) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("tensor", "ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, index: &[usize]) -> T {
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range on axis {i}");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    fn check_finite(self, op: &'static str) -> Result<Self> {
        if kernels::all_finite(&self.data) {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Matrix product over the last two axes, batched over equal leading axes.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() < 2 || other.rank() < 2 {
            return Err(Error::shape("matmul", "operands need rank >= 2"));
        }
        let (lead_a, mk) = self.shape.split_at(self.rank() - 2);
        let (lead_b, kn) = other.shape.split_at(other.rank() - 2);
        if lead_a != lead_b || mk[1] != kn[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape, other.shape),
            ));
        }
        let (m, k, n) = (mk[0], mk[1], kn[1]);
        let batch: usize = lead_a.iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        for b in 0..batch {
            kernels::gemm(
                m,
                n,
                k,
                &self.data[b * m * k..(b + 1) * m * k],
                false,
                &other.data[b * k * n..(b + 1) * k * n],
                false,
                &mut out[b * m * n..(b + 1) * m * n],
                false,
            );
        }
        let mut shape = lead_a.to_vec();
        shape.extend([m, n]);
        Tensor { shape, data: out }.check_finite("matmul")
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                axis,
                rank: self.rank(),
            });
        }
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = self.data.clone();
        let mut buf = vec![T::zero(); len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = out[base + j * inner];
                }
                kernels::softmax_inplace(&mut buf);
                for (j, b) in buf.iter().enumerate() {
                    out[base + j * inner] = *b;
                }
            }
        }
        Tensor {
            shape: self.shape.clone(),
            data: out,
        }
        .check_finite("softmax")
    }

    /// Normalizes each last-axis vector to zero mean and unit variance
    /// (`eps` added to the variance), then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &[T], bias: &[T], eps: T) -> Result<Tensor<T>> {
        if gain.len() != self.cols() || bias.len() != self.cols() {
            return Err(Error::shape(
                "layer_norm",
                format!("last axis {} vs gain {} / bias {}", self.cols(), gain.len(), bias.len()),
            ));
        }
        let mut out = vec![T::zero(); self.len()];
        kernels::layer_norm(&self.data, gain, bias, eps, &mut out, None);
        Tensor {
            shape: self.shape.clone(),
            data: out,
        }
        .check_finite("layer_norm")
    }
}

/// `softmax(q·kᵀ/√d + mask)·v` for a single head. `q` is `[lq, d]`, `k` and
/// `v` are `[lk, d]`.
pub fn scaled_dot_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: &crate::model::AttentionMask,
) -> Result<Tensor<T>> {
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 {
        return Err(Error::shape("attention", "q, k, v must be matrices"));
    }
    let (lq, d) = (q.shape[0], q.shape[1]);
    let lk = k.shape[0];
    if k.shape[1] != d || v.shape != k.shape {
        return Err(Error::shape(
            "attention",
            format!("q {:?} k {:?} v {:?}", q.shape, k.shape, v.shape),
        ));
    }
    if mask.query_len() != lq || mask.key_len() != lk {
        return Err(Error::shape(
            "attention",
            format!("mask {}x{} for {lq}x{lk}", mask.query_len(), mask.key_len()),
        ));
    }
    multi_head_attention(q, k, v, 1, mask)
}

/// Multi-head variant: the model width is split into `heads` equal slices.
pub fn multi_head_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    mask: &crate::model::AttentionMask,
) -> Result<Tensor<T>> {
    let (lq, d) = (q.shape[0], q.shape[1]);
    let lk = k.shape[0];
    if d % heads != 0 {
        return Err(Error::shape("attention", "width not divisible by heads"));
    }
    let mut out = vec![T::zero(); lq * d];
    let mut scores = vec![T::zero(); lk];
    kernels::attention_segment(
        MatView::new(&q.data, d, 0),
        0,
        lq,
        MatView::new(&k.data, d, 0),
        MatView::new(&v.data, d, 0),
        0,
        lk,
        heads,
        d / heads,
        &mask.key_mask(),
        &mut out,
        d,
        0,
        None,
        &mut scores,
    )?;
    Tensor {
        shape: vec![lq, d],
        data: out,
    }
    .check_finite("attention")
}

/// Mean negative log-likelihood over the positions where `loss_mask` is
/// true. Masked-out positions contribute nothing.
pub fn cross_entropy_masked(logits: &Tensor<f64>, targets: &[u32], loss_mask: &[bool]) -> Result<f64> {
    let rows = logits.len() / logits.cols().max(1);
    if targets.len() != rows || loss_mask.len() != rows {
        return Err(Error::shape(
            "cross_entropy",
            format!("{rows} rows, {} targets, {} mask bits", targets.len(), loss_mask.len()),
        ));
    }
    let count = loss_mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyLossMask);
    }
    let v = logits.cols();
    let mut lp = vec![0.0; v];
    let mut total = 0.0;
    for r in 0..rows {
        if !loss_mask[r] {
            continue;
        }
        let t = targets[r] as usize;
        if t >= v {
            return Err(Error::shape("cross_entropy", format!("target {t} >= vocab {v}")));
        }
        kernels::log_softmax_f64(logits.row(r), &mut lp);
        total -= lp[t];
    }
    let loss = total / count as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "cross_entropy" });
    }
    Ok(loss)
}
