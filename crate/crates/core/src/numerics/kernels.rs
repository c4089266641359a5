//! Slice-level compute kernels shared by the training graph and the
//! inference engine. Matrices are row-major.

use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Rows at or below this count take the vector path instead of packed GEMM.
const SMALL_M: usize = 4;

/// `c[m,n] = op(a)·op(b)`, or `c += op(a)·op(b)` when `accumulate`.
///
/// `a` is stored `[m,k]` (or `[k,m]` when `ta`), `b` is stored `[k,n]`
/// (or `[n,k]` when `tb`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k, "gemm: lhs too short");
    assert!(b.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    let c = &mut c[..m * n];
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(T::zero());
        }
        return;
    }
    if !ta && m <= SMALL_M {
        small_m(m, n, k, a, b, tb, c, accumulate);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths were checked above and the strides stay within them.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn small_m<T: Scalar>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        if tb {
            for (j, cj) in crow.iter_mut().enumerate() {
                let d = dot(arow, &b[j * k..(j + 1) * k]);
                *cj = if accumulate { *cj + d } else { d };
            }
        } else {
            if !accumulate {
                crow.fill(T::zero());
            }
            for (p, &ap) in arow.iter().enumerate() {
                if ap == T::zero() {
                    continue;
                }
                axpy(ap, &b[p * n..(p + 1) * n], crow);
            }
        }
    }
}

#[inline(always)]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        let (x, y): (&[T; 8], &[T; 8]) = (x.try_into().unwrap(), y.try_into().unwrap());
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        s = s + x * y;
    }
    s
}

#[inline(always)]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &mut y[..n]);
    // Fixed eight-lane chunks vectorize even for the short rows attention
    // works on, where an unrolled loop would fall through to its tail.
    let mut cy = y.chunks_exact_mut(8);
    let mut cx = x.chunks_exact(8);
    for (ys, xs) in (&mut cy).zip(&mut cx) {
        let ys: &mut [T; 8] = ys.try_into().unwrap();
        let xs: &[T; 8] = xs.try_into().unwrap();
        for l in 0..8 {
            ys[l] = ys[l] + alpha * xs[l];
        }
    }
    for (yi, &xi) in cy.into_remainder().iter_mut().zip(cx.remainder()) {
        *yi = *yi + alpha * xi;
    }
}

/// `c[m,n] = a·op(b)` (or `+=`) without packing and without touching the
/// heap; used by the inference engine. `a` is `[m,k]`, `b` is `[k,n]` or
/// `[n,k]` when `tb`. The untransposed path accumulates `MR x NR` tiles of
/// `c` in locals across the whole `k` loop.
#[allow(clippy::too_many_arguments)]
pub fn gemm_direct<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], tb: bool, c: &mut [T], accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm_direct: operand too short");
    if tb {
        small_m(m, n, k, a, b, true, &mut c[..m * n], accumulate);
        return;
    }
    gemm_strided(m, n, k, a, k, b, n, c, n, accumulate);
}

/// Untransposed GEMM on strided row-major operands: `a` rows are `lda`
/// apart, `b` rows `ldb` and `c` rows `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm_strided<T: Scalar>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(lda >= k && ldb >= n && ldc >= n, "gemm_strided: stride shorter than row");
    assert!(
        a.len() >= (m - 1) * lda + k && (k == 0 || b.len() >= (k - 1) * ldb + n) && c.len() >= (m - 1) * ldc + n,
        "gemm_strided: operand too short"
    );
    let s = Strides { lda, ldb, ldc };
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were detected at runtime.
        unsafe { gemm_tiled_avx2(m, n, k, a, b, c, s, accumulate) };
        return;
    }
    gemm_tiled::<T, 8, false>(m, n, k, a, b, c, s, accumulate);
}

#[derive(Clone, Copy)]
struct Strides {
    lda: usize,
    ldb: usize,
    ldc: usize,
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_tiled_avx2<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T], s: Strides, accumulate: bool) {
    gemm_tiled::<T, 16, true>(m, n, k, a, b, c, s, accumulate);
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_tiled<T: Scalar, const NR: usize, const FMA: bool>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    s: Strides,
    accumulate: bool,
) {
    let full = m / 4 * 4;
    for i0 in (0..full).step_by(4) {
        row_block::<T, 4, NR, FMA>(i0, n, k, a, b, c, s, accumulate);
    }
    for i0 in full..m {
        row_block::<T, 1, NR, FMA>(i0, n, k, a, b, c, s, accumulate);
    }
}

#[inline(always)]
fn madd<T: Scalar, const FMA: bool>(acc: T, x: T, y: T) -> T {
    if FMA {
        x.mul_add(y, acc)
    } else {
        acc + x * y
    }
}

/// Rows `i0..i0+MR` of `c`. Callers guarantee the operand lengths checked in
/// [`gemm_strided`] with `i0 + MR <= m`.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn row_block<T: Scalar, const MR: usize, const NR: usize, const FMA: bool>(
    i0: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    s: Strides,
    accumulate: bool,
) {
    let Strides { lda, ldb, ldc } = s;
    let a = &a[i0 * lda..(i0 + MR - 1) * lda + k];
    let c = &mut c[i0 * ldc..(i0 + MR - 1) * ldc + n];
    let mut j0 = 0;
    while j0 + NR <= n {
        let mut acc = [[T::zero(); NR]; MR];
        for p in 0..k {
            // SAFETY: p < k and j0 + NR <= n keep every index inside `a`
            // ((MR-1)*lda + k) and `b` ((k-1)*ldb + n).
            unsafe {
                let bp = b.as_ptr().add(p * ldb + j0);
                for (r, acc_r) in acc.iter_mut().enumerate() {
                    let x = *a.get_unchecked(r * lda + p);
                    for (j, slot) in acc_r.iter_mut().enumerate() {
                        *slot = madd::<T, FMA>(*slot, x, *bp.add(j));
                    }
                }
            }
        }
        for (r, row) in acc.iter().enumerate() {
            let out = &mut c[r * ldc + j0..r * ldc + j0 + NR];
            for (o, &v) in out.iter_mut().zip(row) {
                *o = if accumulate { *o + v } else { v };
            }
        }
        j0 += NR;
    }
    if j0 < n {
        let w = n - j0;
        for r in 0..MR {
            let mut acc = [T::zero(); NR];
            for p in 0..k {
                let x = a[r * lda + p];
                let bp = &b[p * ldb + j0..p * ldb + n];
                for (slot, &y) in acc.iter_mut().zip(bp) {
                    *slot = madd::<T, FMA>(*slot, x, y);
                }
            }
            let out = &mut c[r * ldc + j0..r * ldc + n];
            for (o, &v) in out.iter_mut().zip(&acc[..w]) {
                *o = if accumulate { *o + v } else { v };
            }
        }
    }
}

/// `out[r,:] = x[r,:]·w + bias`, `w` stored `[din, dout]`. Allocation free.
pub fn linear<T: Scalar>(x: &[T], rows: usize, w: &[T], bias: Option<&[T]>, dout: usize, out: &mut [T]) {
    let din = w.len() / dout;
    gemm_direct(rows, dout, din, x, w, false, out, false);
    if let Some(b) = bias {
        add_bias_rows(&mut out[..rows * dout], b);
    }
}

/// Like [`linear`] but adds into `out` (residual connections).
pub fn linear_acc<T: Scalar>(x: &[T], rows: usize, w: &[T], bias: Option<&[T]>, dout: usize, out: &mut [T]) {
    let din = w.len() / dout;
    gemm_direct(rows, dout, din, x, w, false, out, true);
    if let Some(b) = bias {
        add_bias_rows(&mut out[..rows * dout], b);
    }
}

pub fn add_bias_rows<T: Scalar>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o = *o + b;
        }
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Per-row layer normalization. When `stats` is given, the row mean and
/// reciprocal standard deviation are written to it as `[mean, rstd]` pairs.
pub fn layer_norm<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    eps: T,
    out: &mut [T],
    mut stats: Option<&mut [T]>,
) {
    let d = gain.len();
    let inv_d = T::one() / T::from_usize(d).unwrap();
    for (r, (xr, or)) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr
            .iter()
            .map(|&v| {
                let c = v - mean;
                c * c
            })
            .sum::<T>()
            * inv_d;
        let rstd = T::one() / (var + eps).sqrt();
        for i in 0..d {
            or[i] = (xr[i] - mean) * rstd * gain[i] + bias[i];
        }
        if let Some(s) = stats.as_deref_mut() {
            s[2 * r] = mean;
            s[2 * r + 1] = rstd;
        }
    }
}

/// Numerically stable in-place softmax. `-inf` entries become exact zeros.
#[inline(always)]
pub fn softmax_inplace<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// Log-softmax of one row, evaluated in `f64`.
pub fn log_softmax_f64<T: Scalar>(row: &[T], out: &mut [f64]) {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln() + max;
    for (o, v) in out.iter_mut().zip(row) {
        *o = v.as_f64() - lse;
    }
}

/// Sinusoidal position embedding: `sin` on even, `cos` on odd dimensions.
pub fn sinusoid<T: Scalar>(position: usize, out: &mut [T]) {
    let d = out.len();
    let p = position as f64;
    for i in (0..d).step_by(2) {
        let freq = (10000f64).powf(-(i as f64) / d as f64);
        out[i] = T::from_f64_lossy((p * freq).sin());
        if i + 1 < d {
            out[i + 1] = T::from_f64_lossy((p * freq).cos());
        }
    }
}

/// Row view into a matrix with a column offset, used to address packed
/// projections such as `[q | k | v]`.
#[derive(Clone, Copy)]
pub struct MatView<'a, T> {
    pub data: &'a [T],
    pub stride: usize,
    pub offset: usize,
}

impl<'a, T> MatView<'a, T> {
    pub fn new(data: &'a [T], stride: usize, offset: usize) -> Self {
        Self { data, stride, offset }
    }

    #[inline]
    pub fn head(&self, row: usize, h: usize, dh: usize) -> &'a [T] {
        let s = row * self.stride + self.offset + h * dh;
        &self.data[s..s + dh]
    }
}

/// Which keys a query row may see inside one segment.
#[derive(Clone, Copy, Debug, Default)]
pub struct KeyMask<'a> {
    /// Query `i` may attend key `j` only if `j <= i + offset`.
    pub causal_offset: Option<usize>,
    /// `true` marks a padding key, which is never attended.
    pub padding: Option<&'a [bool]>,
}

impl KeyMask<'_> {
    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        if let Some(o) = self.causal_offset {
            if j > i + o {
                return false;
            }
        }
        self.padding.is_none_or(|p| !p[j])
    }
}

/// Multi-head scaled dot-product attention over one segment.
///
/// Reads query rows `q_start..q_start+lq` and key/value rows
/// `k_start..k_start+lk`; writes `lq` rows of width `heads*dh` into `out`
/// starting at row `out_start`. When `probs` is given the attention weights
/// are stored as `[heads, lq, lk]`.
#[allow(clippy::too_many_arguments)]
pub fn attention_segment<T: Scalar>(
    q: MatView<'_, T>,
    q_start: usize,
    lq: usize,
    k: MatView<'_, T>,
    v: MatView<'_, T>,
    k_start: usize,
    lk: usize,
    heads: usize,
    dh: usize,
    mask: &KeyMask<'_>,
    out: &mut [T],
    out_stride: usize,
    out_start: usize,
    probs: Option<&mut [T]>,
    scores: &mut [T],
) -> Result<()> {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe {
            attention_avx2(
                q, q_start, lq, k, v, k_start, lk, heads, dh, mask, out, out_stride, out_start, probs, scores,
            )
        };
    }
    attention_impl(q, q_start, lq, k, v, k_start, lk, heads, dh, mask, out, out_stride, out_start, probs, scores)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn attention_avx2<T: Scalar>(
    q: MatView<'_, T>,
    q_start: usize,
    lq: usize,
    k: MatView<'_, T>,
    v: MatView<'_, T>,
    k_start: usize,
    lk: usize,
    heads: usize,
    dh: usize,
    mask: &KeyMask<'_>,
    out: &mut [T],
    out_stride: usize,
    out_start: usize,
    probs: Option<&mut [T]>,
    scores: &mut [T],
) -> Result<()> {
    attention_impl(q, q_start, lq, k, v, k_start, lk, heads, dh, mask, out, out_stride, out_start, probs, scores)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn attention_impl<T: Scalar>(
    q: MatView<'_, T>,
    q_start: usize,
    lq: usize,
    k: MatView<'_, T>,
    v: MatView<'_, T>,
    k_start: usize,
    lk: usize,
    heads: usize,
    dh: usize,
    mask: &KeyMask<'_>,
    out: &mut [T],
    out_stride: usize,
    out_start: usize,
    mut probs: Option<&mut [T]>,
    scores: &mut [T],
) -> Result<()> {
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    if lq > 1 && probs.is_none() && scores.len() >= attention_scratch_len(lk, dh) {
        return attention_blocked(q, q_start, lq, k, v, k_start, lk, heads, dh, mask, out, out_stride, out_start, scores, scale);
    }
    let scores = &mut scores[..lk];
    for i in 0..lq {
        // Keys past the causal limit get probability zero without being scored.
        let lim = mask.causal_offset.map_or(lk, |o| (i + o + 1).min(lk));
        for h in 0..heads {
            let qh = q.head(q_start + i, h, dh);
            let visible = &mut scores[..lim];
            let mut any = lim > 0;
            match mask.padding {
                None => {
                    for (j, s) in visible.iter_mut().enumerate() {
                        *s = dot(qh, k.head(k_start + j, h, dh)) * scale;
                    }
                }
                Some(pad) => {
                    any = false;
                    for (j, s) in visible.iter_mut().enumerate() {
                        if pad[j] {
                            *s = T::neg_infinity();
                        } else {
                            *s = dot(qh, k.head(k_start + j, h, dh)) * scale;
                            any = true;
                        }
                    }
                }
            }
            if !any {
                return Err(Error::FullyMaskedRow { row: i });
            }
            softmax_inplace(visible);
            let o = &mut out[(out_start + i) * out_stride + h * dh..][..dh];
            o.fill(T::zero());
            for (j, &p) in visible.iter().enumerate() {
                if p != T::zero() {
                    axpy(p, v.head(k_start + j, h, dh), o);
                }
            }
            if let Some(pr) = probs.as_deref_mut() {
                let row = &mut pr[(h * lq + i) * lk..][..lk];
                row[..lim].copy_from_slice(&scores[..lim]);
                row[lim..].fill(T::zero());
            }
        }
    }
    Ok(())
}

/// Query rows scored together on the blocked path.
const QUERY_BLOCK: usize = 32;

/// Scratch length that lets [`attention_segment`] take the blocked path:
/// one head of keys laid out `[dh, lk]` plus a block of score rows.
pub fn attention_scratch_len(lk: usize, dh: usize) -> usize {
    lk * (dh + QUERY_BLOCK)
}

/// Per head and block of query rows: `S = Q·Kᵀ` against a pre-scaled
/// transposed copy of the keys, row softmax, then `O = S·V`, both products
/// through the tiled GEMM.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn attention_blocked<T: Scalar>(
    q: MatView<'_, T>,
    q_start: usize,
    lq: usize,
    k: MatView<'_, T>,
    v: MatView<'_, T>,
    k_start: usize,
    lk: usize,
    heads: usize,
    dh: usize,
    mask: &KeyMask<'_>,
    out: &mut [T],
    out_stride: usize,
    out_start: usize,
    scratch: &mut [T],
    scale: T,
) -> Result<()> {
    let (kt, scores) = scratch.split_at_mut(dh * lk);
    for h in 0..heads {
        for j in 0..lk {
            for (p, &x) in k.head(k_start + j, h, dh).iter().enumerate() {
                kt[p * lk + j] = x * scale;
            }
        }
        let v_base = k_start * v.stride + v.offset + h * dh;
        for i0 in (0..lq).step_by(QUERY_BLOCK) {
            let qb = QUERY_BLOCK.min(lq - i0);
            let s = &mut scores[..qb * lk];
            let q_base = (q_start + i0) * q.stride + q.offset + h * dh;
            gemm_strided(qb, lk, dh, &q.data[q_base..], q.stride, kt, lk, s, lk, false);
            for (r, row) in s.chunks_exact_mut(lk).enumerate() {
                let i = i0 + r;
                let lim = mask.causal_offset.map_or(lk, |o| (i + o + 1).min(lk));
                let mut any = lim > 0;
                if let Some(pad) = mask.padding {
                    any = false;
                    for (sj, &pj) in row[..lim].iter_mut().zip(pad) {
                        if pj {
                            *sj = T::neg_infinity();
                        } else {
                            any = true;
                        }
                    }
                }
                if !any {
                    return Err(Error::FullyMaskedRow { row: i });
                }
                softmax_inplace(&mut row[..lim]);
                row[lim..].fill(T::zero());
            }
            let o_base = (out_start + i0) * out_stride + h * dh;
            gemm_strided(qb, dh, lk, s, lk, &v.data[v_base..], v.stride, &mut out[o_base..], out_stride, false);
        }
    }
    Ok(())
}

pub fn all_finite<T: Scalar>(x: &[T]) -> bool {
    x.iter().all(|v| v.is_finite())
}
