use crate::data::TokenId;
use crate::error::{Error, Result};
use crate::numerics::kernels::KeyMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskMode {
    Causal,
    Full,
}

/// Self-attention visibility for one sequence. In causal mode with more
/// keys than queries, the queries are the last `query_len` keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    mode: MaskMode,
    query_len: usize,
    key_len: usize,
    padding: Option<Vec<bool>>,
}

impl AttentionMask {
    pub fn new(mode: MaskMode, query_len: usize, key_len: usize) -> Result<Self> {
        if mode == MaskMode::Causal && query_len > key_len {
            return Err(Error::shape(
                "mask",
                format!("causal mask with {query_len} queries over {key_len} keys"),
            ));
        }
        Ok(Self {
            mode,
            query_len,
            key_len,
            padding: None,
        })
    }

    pub fn causal(len: usize) -> Self {
        Self::new(MaskMode::Causal, len, len).expect("square causal mask")
    }

    pub fn full(len: usize) -> Self {
        Self::new(MaskMode::Full, len, len).expect("square full mask")
    }

    /// Marks key `j` as padding where `padding[j]` is true.
    pub fn with_padding(mut self, padding: Vec<bool>) -> Result<Self> {
        if padding.len() != self.key_len {
            return Err(Error::shape(
                "mask",
                format!("{} padding flags for {} keys", padding.len(), self.key_len),
            ));
        }
        self.padding = Some(padding);
        Ok(self)
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn query_len(&self) -> usize {
        self.query_len
    }

    pub fn key_len(&self) -> usize {
        self.key_len
    }

    pub fn key_mask(&self) -> KeyMask<'_> {
        KeyMask {
            causal_offset: match self.mode {
                MaskMode::Causal => Some(self.key_len - self.query_len),
                MaskMode::Full => None,
            },
            padding: self.padding.as_deref(),
        }
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.key_mask().allowed(i, j)
    }

    /// The realized `query_len × key_len` matrix, row-major.
    pub fn matrix(&self) -> Vec<bool> {
        let mut m = Vec::with_capacity(self.query_len * self.key_len);
        for i in 0..self.query_len {
            for j in 0..self.key_len {
                m.push(self.allowed(i, j));
            }
        }
        m
    }
}

/// Tokens with explicit, strictly increasing positions.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PositionedSequence {
    tokens: Vec<TokenId>,
    positions: Vec<usize>,
}

impl PositionedSequence {
    pub fn new(tokens: Vec<TokenId>, positions: Vec<usize>) -> Result<Self> {
        if tokens.len() != positions.len() {
            return Err(Error::LengthMismatch(format!(
                "{} tokens, {} positions",
                tokens.len(),
                positions.len()
            )));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::PositionOrder(format!(
                "positions must be strictly increasing: {positions:?}"
            )));
        }
        Ok(Self { tokens, positions })
    }

    /// Positions `start, start+1, ...`.
    pub fn contiguous(tokens: Vec<TokenId>, start: usize) -> Self {
        let positions = (start..start + tokens.len()).collect();
        Self { tokens, positions }
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn into_parts(self) -> (Vec<TokenId>, Vec<usize>) {
        (self.tokens, self.positions)
    }
}
