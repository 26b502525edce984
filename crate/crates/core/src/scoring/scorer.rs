use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{DistributionMatrix, Embeddings, ScoreError};
use crate::seqcore::Sequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wants {
    pub distributions: bool,
    pub embeddings: bool,
}

impl Wants {
    pub const DISTRIBUTIONS: Wants = Wants {
        distributions: true,
        embeddings: false,
    };
    pub const EMBEDDINGS: Wants = Wants {
        distributions: false,
        embeddings: true,
    };
    pub const BOTH: Wants = Wants {
        distributions: true,
        embeddings: true,
    };
}

/// One request to a scorer: a sequence with some positions hidden.
///
/// With no masked positions the scorer returns distributions at every
/// position from a single pass; otherwise only at the masked ones.
#[derive(Debug, Clone)]
pub struct ScorerQuery<'a> {
    pub sequence: &'a Sequence,
    masked: Vec<usize>,
    pub wants: Wants,
}

impl<'a> ScorerQuery<'a> {
    pub fn new(sequence: &'a Sequence, mut masked: Vec<usize>, wants: Wants) -> Result<Self, ScoreError> {
        masked.sort_unstable();
        if masked.windows(2).any(|w| w[0] == w[1]) {
            return Err(ScoreError::InvalidQuery("masked positions must be unique".into()));
        }
        if let Some(&last) = masked.last() {
            if last >= sequence.len() {
                return Err(ScoreError::InvalidQuery(format!(
                    "masked position {last} out of range for length {}",
                    sequence.len()
                )));
            }
        }
        Ok(Self {
            sequence,
            masked,
            wants,
        })
    }

    pub fn unmasked(sequence: &'a Sequence, wants: Wants) -> Self {
        Self {
            sequence,
            masked: Vec::new(),
            wants,
        }
    }

    pub fn single(sequence: &'a Sequence, position: usize) -> Result<Self, ScoreError> {
        Self::new(sequence, vec![position], Wants::DISTRIBUTIONS)
    }

    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn is_masked(&self, pos: usize) -> bool {
        self.masked.binary_search(&pos).is_ok()
    }

    /// Positions at which distributions are owed.
    pub fn covered_positions(&self) -> Vec<usize> {
        if self.masked.is_empty() {
            (0..self.sequence.len()).collect()
        } else {
            self.masked.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScorerResponse {
    pub distributions: Option<DistributionMatrix>,
    pub embeddings: Option<Embeddings>,
}

impl ScorerResponse {
    pub fn distributions(&self) -> Result<&DistributionMatrix, ScoreError> {
        self.distributions
            .as_ref()
            .ok_or_else(|| ScoreError::Capability("response carries no distributions".into()))
    }

    pub fn embeddings(&self) -> Result<&Embeddings, ScoreError> {
        self.embeddings
            .as_ref()
            .ok_or_else(|| ScoreError::Capability("response carries no embeddings".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub distributions: bool,
    pub embeddings: bool,
    /// Left-to-right next-symbol distributions are available.
    pub causal: bool,
    pub max_len: Option<usize>,
    /// Safe to issue queries from several threads at once.
    pub concurrent: bool,
}

impl Capabilities {
    pub fn distributions_only() -> Self {
        Self {
            distributions: true,
            embeddings: false,
            causal: false,
            max_len: None,
            concurrent: true,
        }
    }

    pub fn check_wants(&self, wants: Wants) -> Result<(), ScoreError> {
        if wants.distributions && !self.distributions {
            return Err(ScoreError::Capability("scorer does not produce distributions".into()));
        }
        if wants.embeddings && !self.embeddings {
            return Err(ScoreError::Capability("scorer does not produce embeddings".into()));
        }
        Ok(())
    }

    pub fn check_len(&self, len: usize) -> Result<(), ScoreError> {
        match self.max_len {
            Some(cap) if len > cap => Err(ScoreError::ContextOverflow { len, cap }),
            _ => Ok(()),
        }
    }
}

/// Anything that maps (sequence, masked positions) to per-position
/// distributions over the sequence alphabet.
pub trait Scorer: Send + Sync {
    /// Stable identity string recorded in reports.
    fn name(&self) -> String;

    fn capabilities(&self) -> Capabilities;

    /// Answers a batch of queries, one response per query, in order.
    fn score_batch(&self, queries: &[ScorerQuery<'_>]) -> Result<Vec<ScorerResponse>, ScoreError>;

    /// Row `i` is the distribution of symbol `i` given symbols `0..i`.
    fn next_symbol_distributions(&self, _x: &Sequence) -> Result<DistributionMatrix, ScoreError> {
        Err(ScoreError::Capability(format!("{} is not a causal scorer", self.name())))
    }

    fn score(&self, query: &ScorerQuery<'_>) -> Result<ScorerResponse, ScoreError> {
        let mut out = self.score_batch(std::slice::from_ref(query))?;
        out.pop()
            .ok_or_else(|| ScoreError::Shape("scorer returned no response".into()))
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn name(&self) -> String {
        (**self).name()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn score_batch(&self, queries: &[ScorerQuery<'_>]) -> Result<Vec<ScorerResponse>, ScoreError> {
        (**self).score_batch(queries)
    }
    fn next_symbol_distributions(&self, x: &Sequence) -> Result<DistributionMatrix, ScoreError> {
        (**self).next_symbol_distributions(x)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn score_batch(&self, queries: &[ScorerQuery<'_>]) -> Result<Vec<ScorerResponse>, ScoreError> {
        (**self).score_batch(queries)
    }
    fn next_symbol_distributions(&self, x: &Sequence) -> Result<DistributionMatrix, ScoreError> {
        (**self).next_symbol_distributions(x)
    }
}

/// Wraps a scorer and counts the queries that pass through it.
pub struct CountingScorer<S> {
    inner: S,
    queries: AtomicU64,
    batches: AtomicU64,
}

impl<S: Scorer> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            queries: AtomicU64::new(0),
            batches: AtomicU64::new(0),
        }
    }

    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn batches(&self) -> u64 {
        self.batches.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: Scorer> Scorer for CountingScorer<S> {
    fn name(&self) -> String {
        self.inner.name()
    }
    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }
    fn score_batch(&self, queries: &[ScorerQuery<'_>]) -> Result<Vec<ScorerResponse>, ScoreError> {
        self.queries.fetch_add(queries.len() as u64, Ordering::Relaxed);
        self.batches.fetch_add(1, Ordering::Relaxed);
        self.inner.score_batch(queries)
    }
    fn next_symbol_distributions(&self, x: &Sequence) -> Result<DistributionMatrix, ScoreError> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.inner.next_symbol_distributions(x)
    }
}

/// Wraps a scorer and imposes a maximum sequence length, as a stand-in for
/// models with a fixed context window.
pub struct ContextLimited<S> {
    inner: S,
    cap: usize,
}

impl<S: Scorer> ContextLimited<S> {
    pub fn new(inner: S, cap: usize) -> Self {
        Self { inner, cap }
    }
}

impl<S: Scorer> Scorer for ContextLimited<S> {
    fn name(&self) -> String {
        format!("{}[max_len={}]", self.inner.name(), self.cap)
    }
    fn capabilities(&self) -> Capabilities {
        let mut c = self.inner.capabilities();
        c.max_len = Some(c.max_len.map_or(self.cap, |m| m.min(self.cap)));
        c
    }
    fn score_batch(&self, queries: &[ScorerQuery<'_>]) -> Result<Vec<ScorerResponse>, ScoreError> {
        let caps = self.capabilities();
        for q in queries {
            caps.check_len(q.sequence.len())?;
        }
        self.inner.score_batch(queries)
    }
    fn next_symbol_distributions(&self, x: &Sequence) -> Result<DistributionMatrix, ScoreError> {
        self.capabilities().check_len(x.len())?;
        self.inner.next_symbol_distributions(x)
    }
}
