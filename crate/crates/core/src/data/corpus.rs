use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{TokenId, Vocabulary};
use crate::error::{Error, Result};

/// Source/target token ids, both without `[BOS]`/`[EOS]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl SentencePair {
    pub fn new(source: Vec<TokenId>, target: Vec<TokenId>) -> Self {
        Self { source, target }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub pairs: Vec<SentencePair>,
    pub vocab: Vocabulary,
}

impl Corpus {
    /// Builds a corpus, checking that every id is a regular token.
    pub fn new(pairs: Vec<SentencePair>, vocab: Vocabulary) -> Result<Self> {
        for (i, p) in pairs.iter().enumerate() {
            for &id in p.source.iter().chain(&p.target) {
                if id as usize >= vocab.len() || vocab.is_special(id) {
                    return Err(Error::MalformedLine {
                        line: i + 1,
                        reason: format!("id {id} is not a regular token"),
                    });
                }
            }
            if p.source.is_empty() || p.target.is_empty() {
                return Err(Error::MalformedLine {
                    line: i + 1,
                    reason: "empty side".into(),
                });
            }
        }
        Ok(Self { pairs, vocab })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Splits off the last `n` pairs as a second corpus.
    pub fn split_tail(mut self, n: usize) -> (Corpus, Corpus) {
        let at = self.pairs.len().saturating_sub(n);
        let tail = self.pairs.split_off(at);
        let vocab = self.vocab.clone();
        (self, Corpus { pairs: tail, vocab })
    }

    /// Total source words, the unit for words-per-second.
    pub fn source_words(&self) -> usize {
        self.pairs.iter().map(|p| p.source.len()).sum()
    }

    /// Parses the tab-separated text format.
    pub fn parse(text: &str, vocab: Vocabulary) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim_end_matches('\r');
            let (src, tgt) = raw.split_once('\t').ok_or_else(|| Error::MalformedLine {
                line,
                reason: "missing tab separator".into(),
            })?;
            if tgt.contains('\t') {
                return Err(Error::MalformedLine {
                    line,
                    reason: "more than one tab".into(),
                });
            }
            let source = vocab.encode(src, line)?;
            let target = vocab.encode(tgt, line)?;
            if source.is_empty() || target.is_empty() {
                return Err(Error::MalformedLine {
                    line,
                    reason: "empty source or target".into(),
                });
            }
            pairs.push(SentencePair { source, target });
        }
        Ok(Self { pairs, vocab })
    }

    pub fn load(path: impl AsRef<Path>, vocab: Vocabulary) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::file(path.as_ref(), e))?;
        Self::parse(&text, vocab)
    }

    /// Loads a corpus with its sidecar vocabulary file.
    pub fn load_with_vocab(path: impl AsRef<Path>, vocab_path: impl AsRef<Path>) -> Result<Self> {
        Self::load(path, Vocabulary::load(vocab_path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = fs::File::create(path.as_ref()).map_err(|e| Error::file(path.as_ref(), e))?;
        let mut w = BufWriter::new(f);
        for p in &self.pairs {
            writeln!(
                w,
                "{}\t{}",
                self.vocab.decode(&p.source),
                self.vocab.decode(&p.target)
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Keeps at most the first `max_len` tokens.
pub fn truncate(seq: &[TokenId], max_len: usize) -> &[TokenId] {
    &seq[..seq.len().min(max_len)]
}
