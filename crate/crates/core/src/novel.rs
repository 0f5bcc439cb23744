//! The dynamic set of novel tokens: vocabulary entries not yet observed in
//! the target prefix `y^1..y^{t-1}`.

use crate::{Error, Result, TokenId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NovelTokenSet {
    seen: Vec<bool>,
    seen_count: usize,
    step: usize,
    exempt: Vec<TokenId>,
}

impl NovelTokenSet {
    /// At step 1 every token is novel.
    pub fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::ZeroVocab);
        }
        Ok(Self {
            seen: vec![false; vocab_size],
            seen_count: 0,
            step: 1,
            exempt: Vec::new(),
        })
    }

    /// Tokens in `exempt` are never marked as seen, so they stay novel.
    pub fn with_exempt(vocab_size: usize, exempt: &[TokenId]) -> Result<Self> {
        let mut set = Self::new(vocab_size)?;
        set.exempt = exempt.to_vec();
        Ok(set)
    }

    /// Records the target observed at the current step and moves to the next.
    pub fn advance(&mut self, observed_target: TokenId) -> Result<()> {
        let idx = observed_target as usize;
        if idx >= self.seen.len() {
            return Err(Error::IdOutOfRange {
                id: idx,
                size: self.seen.len(),
            });
        }
        if !self.seen[idx] && !self.exempt.contains(&observed_target) {
            self.seen[idx] = true;
            self.seen_count += 1;
        }
        self.step += 1;
        Ok(())
    }

    /// Clears all observations, as at the start of a new target sequence.
    pub fn reset(&mut self) {
        self.seen.fill(false);
        self.seen_count = 0;
        self.step = 1;
    }

    pub fn is_novel(&self, id: TokenId) -> bool {
        !self.seen[id as usize]
    }

    /// `mask[i]` is true iff token `i` is novel at the current step.
    pub fn membership_mask(&self) -> Vec<bool> {
        self.seen.iter().map(|s| !s).collect()
    }

    /// Non-novel tokens, ascending.
    pub fn seen_tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.seen
            .iter()
            .enumerate()
            .filter(|(_, s)| **s)
            .map(|(i, _)| i as TokenId)
    }

    pub fn seen_mask(&self) -> &[bool] {
        &self.seen
    }

    pub fn seen_count(&self) -> usize {
        self.seen_count
    }

    pub fn novel_count(&self) -> usize {
        self.seen.len() - self.seen_count
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn vocab_size(&self) -> usize {
        self.seen.len()
    }
}
