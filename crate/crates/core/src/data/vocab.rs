use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const MASK: TokenId = 3;

/// Chunk sizes with a dedicated start token unless configured otherwise.
pub const DEFAULT_CHUNK_SIZES: [usize; 3] = [2, 3, 4];

const FIXED_SPECIALS: [&str; 4] = ["[PAD]", "[BOS]", "[EOS]", "[MASK]"];

/// Token ↔ id table. Ids `0..4` are `[PAD] [BOS] [EOS] [MASK]`, followed by
/// one `[BOS_k]` per supported chunk size, followed by regular tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    chunk_sizes: Vec<usize>,
}

impl Vocabulary {
    pub fn new<I, S>(chunk_sizes: &[usize], regular: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut sorted = chunk_sizes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != chunk_sizes.len() || sorted.iter().any(|&k| k < 2) {
            return Err(Error::InvalidVocabulary(format!(
                "chunk sizes must be distinct and >= 2, got {chunk_sizes:?}"
            )));
        }
        let mut tokens: Vec<String> = FIXED_SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(chunk_sizes.iter().map(|k| format!("[BOS_{k}]")));
        for t in regular {
            let t = t.into();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVocabulary(format!("bad token {t:?}")));
            }
            tokens.push(t);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            index,
            chunk_sizes: chunk_sizes.to_vec(),
        })
    }

    /// `n_regular` tokens named `w0, w1, ...`.
    pub fn synthetic(n_regular: usize, chunk_sizes: &[usize]) -> Result<Self> {
        Self::new(chunk_sizes, (0..n_regular).map(|i| format!("w{i}")))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_specials(&self) -> usize {
        FIXED_SPECIALS.len() + self.chunk_sizes.len()
    }

    pub fn num_regular(&self) -> usize {
        self.len() - self.num_specials()
    }

    pub fn first_regular(&self) -> TokenId {
        self.num_specials() as TokenId
    }

    pub fn chunk_sizes(&self) -> &[usize] {
        &self.chunk_sizes
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < self.num_specials()
    }

    /// Start token for chunk size `k`.
    pub fn bos_k(&self, k: usize) -> Result<TokenId> {
        self.chunk_sizes
            .iter()
            .position(|&c| c == k)
            .map(|i| (FIXED_SPECIALS.len() + i) as TokenId)
            .ok_or(Error::UnsupportedChunk(k))
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Whitespace-splits `text` into regular-token ids.
    pub fn encode(&self, text: &str, line: usize) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|t| match self.id(t) {
                Some(id) if !self.is_special(id) => Ok(id),
                _ => Err(Error::UnknownToken {
                    token: t.to_string(),
                    line,
                }),
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("[UNK]"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line, in id order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        fs::write(path.as_ref(), s).map_err(|e| Error::file(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::file(path.as_ref(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
        if lines.len() < FIXED_SPECIALS.len() || lines[..4] != FIXED_SPECIALS {
            return Err(Error::InvalidVocabulary(
                "file must start with [PAD] [BOS] [EOS] [MASK]".into(),
            ));
        }
        let mut chunk_sizes = Vec::new();
        let mut rest = &lines[4..];
        while let Some(k) = rest
            .first()
            .and_then(|l| l.strip_prefix("[BOS_"))
            .and_then(|l| l.strip_suffix(']'))
        {
            let k: usize = k
                .parse()
                .map_err(|_| Error::InvalidVocabulary(format!("bad chunk token [BOS_{k}]")))?;
            chunk_sizes.push(k);
            rest = &rest[1..];
        }
        Self::new(&chunk_sizes, rest.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::synthetic(5, &DEFAULT_CHUNK_SIZES).unwrap();
        assert_eq!(v.id("[PAD]"), Some(PAD));
        assert_eq!(v.id("[BOS]"), Some(BOS));
        assert_eq!(v.id("[EOS]"), Some(EOS));
        assert_eq!(v.id("[MASK]"), Some(MASK));
        assert_eq!(v.bos_k(2).unwrap(), 4);
        assert_eq!(v.bos_k(3).unwrap(), 5);
        assert_eq!(v.bos_k(4).unwrap(), 6);
        assert_eq!(v.first_regular(), 7);
        assert_eq!(v.len(), 12);
        assert!(matches!(v.bos_k(5), Err(Error::UnsupportedChunk(5))));
    }

    #[test]
    fn save_load_keeps_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocabulary::new(&[2, 4], ["a", "b", "c"]).unwrap();
        v.save(&p).unwrap();
        let back = Vocabulary::load(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.bos_k(4).unwrap(), 5);
        assert_eq!(back.id("a"), Some(6));
    }

    #[test]
    fn rejects_duplicates_and_bad_chunks() {
        assert!(Vocabulary::new(&[2], ["a", "a"]).is_err());
        assert!(Vocabulary::new(&[1], ["a"]).is_err());
        assert!(Vocabulary::new(&[2, 2], ["a"]).is_err());
        assert!(Vocabulary::parse("[PAD]\n[EOS]\n").is_err());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let v = Vocabulary::new(&[2], ["a", "b", "c"]).unwrap();
        let ids = v.encode("a  c b", 1).unwrap();
        assert_eq!(v.decode(&ids), "a c b");
        assert!(matches!(v.encode("a [EOS]", 3), Err(Error::UnknownToken { line: 3, .. })));
        assert!(matches!(v.encode("zz", 1), Err(Error::UnknownToken { .. })));
    }
}
