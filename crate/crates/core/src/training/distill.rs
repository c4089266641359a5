//! Sequence-level distillation: targets replaced by a teacher's beam output.

use serde::Serialize;

use crate::data::{Corpus, SentencePair};
use crate::decoding::{DecodeOptions, Workspace};
use crate::error::Result;
use crate::model::InferenceModel;
use crate::numerics::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DistillReport {
    pub pairs: usize,
    /// Targets that differ from the original reference.
    pub changed: usize,
    /// Empty teacher outputs replaced by a copy of the source.
    pub fallbacks: usize,
}

/// Decodes every source with AT beam search and uses the result as the new
/// target. Empty outputs fall back to copying the source.
pub fn distill_corpus<T: Scalar>(
    teacher: &InferenceModel<T>,
    corpus: &Corpus,
    beam: usize,
    length_penalty: f64,
) -> Result<(Corpus, DistillReport)> {
    teacher.config().check_vocab(&corpus.vocab)?;
    let opts = DecodeOptions {
        length_penalty,
        ..DecodeOptions::at(beam)
    };
    let mut ws = Workspace::new(teacher.config(), beam, 1)?;
    let mut report = DistillReport {
        pairs: corpus.len(),
        ..Default::default()
    };
    let mut pairs = Vec::with_capacity(corpus.len());
    let mut out = Vec::new();
    for p in &corpus.pairs {
        ws.translate_into(teacher, &p.source, &opts, &mut out)?;
        let target = if out.is_empty() {
            report.fallbacks += 1;
            p.source.clone()
        } else {
            out.clone()
        };
        report.changed += (target != p.target) as usize;
        pairs.push(SentencePair::new(p.source.clone(), target));
    }
    Ok((Corpus::new(pairs, corpus.vocab.clone())?, report))
}
