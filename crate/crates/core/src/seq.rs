//! Token sequences and preference pairs, the data the whole crate consumes.
//!
//! Tokens are plain `usize` ids into a [`Vocab`]. A [`PreferencePair`] carries
//! a positive context/continuation and a negative context/continuation; the
//! two sides may share a context, share a continuation, or differ in both.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// A sequence of token ids. Contexts may be empty; continuations may not.
pub type TokenSeq = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SeqError {
    #[error("vocabulary must contain at least one token")]
    EmptyVocab,
    #[error("duplicate token {0:?} in vocabulary")]
    DuplicateToken(String),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("continuation must contain at least one token")]
    EmptyContinuation,
    #[error("dataset must contain at least one pair")]
    EmptyDataset,
    #[error("unknown token {0:?}")]
    UnknownToken(String),
}

/// A fixed token inventory. Ids are assigned by position: the i-th token has
/// id i. Index `size()` is reserved for the model's begin-of-sequence
/// embedding row and never appears in a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self, SeqError> {
        if tokens.is_empty() {
            return Err(SeqError::EmptyVocab);
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(SeqError::DuplicateToken(t.clone()));
            }
        }
        Ok(Self { tokens, index })
    }

    /// A vocabulary of `n` synthetic tokens named "t0".."t{n-1}".
    pub fn synthetic(n: usize) -> Result<Self, SeqError> {
        let tokens = (0..n).map(|i| alloc::format!("t{i}")).collect();
        Self::new(tokens)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Embedding row used when a continuation has no preceding token.
    pub fn bos_row(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn id(&self, token: &str) -> Result<usize, SeqError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| SeqError::UnknownToken(token.to_string()))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// One training example: a rewarded continuation `y_pos` of context `x_pos`
/// and a penalized continuation `y_neg` of context `x_neg`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferencePair {
    pub x_pos: TokenSeq,
    pub y_pos: TokenSeq,
    pub x_neg: TokenSeq,
    pub y_neg: TokenSeq,
}

impl PreferencePair {
    /// Checks that both continuations are non-empty and every id fits the
    /// vocabulary. Contexts are allowed to be empty.
    pub fn validate(&self, vocab_size: usize) -> Result<(), SeqError> {
        if self.y_pos.is_empty() || self.y_neg.is_empty() {
            return Err(SeqError::EmptyContinuation);
        }
        for seq in [&self.x_pos, &self.y_pos, &self.x_neg, &self.y_neg] {
            for &id in seq.iter() {
                if id >= vocab_size {
                    return Err(SeqError::TokenOutOfRange { id, vocab_size });
                }
            }
        }
        Ok(())
    }

    /// True when both sides are literally the same sequences.
    pub fn is_identical(&self) -> bool {
        self.x_pos == self.x_neg && self.y_pos == self.y_neg
    }
}
