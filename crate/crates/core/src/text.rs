//! Tokenization, document truncation and query-preserving passage splitting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Reserved id for out-of-vocabulary tokens in table vocabularies.
pub const OOV_ID: TokenId = 0;

/// A query or document as surface tokens plus parallel vocabulary ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub ids: Vec<TokenId>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Sub-sequence `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> TokenizedText {
        TokenizedText {
            tokens: self.tokens[start..end].to_vec(),
            ids: self.ids[start..end].to_vec(),
        }
    }
}

/// Maps surface tokens to ids.
#[derive(Debug, Clone)]
pub enum Vocabulary {
    /// Explicit table; unknown tokens map to [`OOV_ID`].
    Table(HashMap<String, TokenId>),
    /// Every token gets a 32-bit FNV-1a hash id, so no table is needed.
    Hashing,
}

impl Vocabulary {
    pub fn id(&self, token: &str) -> TokenId {
        match self {
            Vocabulary::Table(map) => map.get(token).copied().unwrap_or(OOV_ID),
            Vocabulary::Hashing => fnv1a(token.as_bytes()),
        }
    }

    /// Builds a table vocabulary; ids start at 1, in the given order.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut map = HashMap::new();
        for tok in tokens {
            let next = map.len() as TokenId + 1;
            map.entry(tok.into()).or_insert(next);
        }
        Vocabulary::Table(map)
    }
}

fn fnv1a(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for b in bytes {
        h ^= u32::from(*b);
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// Hook for encoder-specific tokenizers.
pub trait Tokenizer: Send + Sync {
    fn split(&self, text: &str) -> Vec<String>;
}

/// Lowercases and splits on anything that is not alphanumeric.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn split(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }
}

pub fn tokenize_with(tokenizer: &dyn Tokenizer, text: &str, vocab: &Vocabulary) -> TokenizedText {
    let tokens = tokenizer.split(text);
    let ids = tokens.iter().map(|t| vocab.id(t)).collect();
    TokenizedText { tokens, ids }
}

/// Tokenizes with the default [`WordTokenizer`].
pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenizedText {
    tokenize_with(&WordTokenizer, text, vocab)
}

/// Keeps the first `min(len, limit)` tokens.
pub fn truncate_doc(doc: &TokenizedText, limit: usize) -> TokenizedText {
    let end = doc.len().min(limit.max(1));
    doc.slice(0, end)
}

/// Half-open spans covering a truncated document, each at most `capacity` long.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub segments: Vec<(usize, usize)>,
    pub capacity: usize,
}

impl SplitPlan {
    pub fn doc_len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.1)
    }

    pub fn lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.segments.iter().map(|(s, e)| e - s)
    }
}

/// Splits `doc_len` tokens into the fewest segments that fit beside the full
/// query and control tokens, with segment lengths differing by at most one.
pub fn plan_splits(
    doc_len: usize,
    query_len: usize,
    model_limit: usize,
    control_tokens: usize,
) -> Result<SplitPlan> {
    if query_len + control_tokens >= model_limit {
        return Err(Error::QueryTooLong {
            query_len,
            control_tokens,
            model_limit,
        });
    }
    let capacity = model_limit - query_len - control_tokens;
    if doc_len == 0 {
        return Ok(SplitPlan {
            segments: vec![(0, 0)],
            capacity,
        });
    }
    let n = doc_len.div_ceil(capacity);
    let base = doc_len / n;
    let extra = doc_len % n;
    let mut segments = Vec::with_capacity(n);
    let mut start = 0;
    for k in 0..n {
        let len = base + usize::from(k < extra);
        segments.push((start, start + len));
        start += len;
    }
    Ok(SplitPlan { segments, capacity })
}
