//! Corpus-level BLEU over token ids.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

fn ngram_counts<T: Hash + Eq + Clone>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// BLEU in `[0, 100]` with brevity penalty; precisions for `n > 1` use
/// add-one smoothing.
pub fn bleu<T: Hash + Eq + Clone>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch(format!(
            "{} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=max_n {
            let rc = ngram_counts(r, n);
            for (g, cnt) in ngram_counts(c, n) {
                matches[n - 1] += cnt.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if c_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let p = if n == 0 {
            matches[0] as f64 / totals[0] as f64
        } else {
            (matches[n] + 1) as f64 / (totals[n] + 1) as f64
        };
        log_sum += p.ln();
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / max_n as f64).exp())
}

/// Fraction of candidates identical to their reference.
pub fn sequence_accuracy<T: PartialEq>(candidates: &[Vec<T>], references: &[Vec<T>]) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    let ok = candidates.iter().zip(references).filter(|(c, r)| c == r).count();
    ok as f64 / candidates.len() as f64
}

/// Position-wise token agreement over the reference tokens.
pub fn token_accuracy<T: PartialEq>(candidates: &[Vec<T>], references: &[Vec<T>]) -> f64 {
    let total: usize = references.iter().map(Vec::len).sum();
    if total == 0 {
        return 0.0;
    }
    let ok: usize = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| c.iter().zip(r).filter(|(a, b)| a == b).count())
        .sum();
    ok as f64 / total as f64
}
