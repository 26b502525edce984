//! The scorer contract and the likelihood and uncertainty math built on it.
//!
//! All logarithms are natural: entropies are in nats and pseudo-perplexity is
//! the exponential of the mean negative log-probability of the true symbols.

mod matrix;
mod metrics;
mod profile;
mod scorer;

use thiserror::Error;

use crate::seqcore::SeqError;

pub use matrix::{DistributionMatrix, Embeddings, NORMALIZATION_TOL};
pub use metrics::{
    causal_perplexity, entropy, perplexity_from_probs, profile_divergence, pseudo_perplexity,
    summarize, Perplexity, ProfileDivergence, ScoreSummary, PROB_FLOOR,
};
pub(crate) use profile::par_map;
pub use profile::{masked_row, ofs_profile, one_at_a_time_profile, ProfileOptions, DEFAULT_BATCH};
pub use scorer::{Capabilities, ContextLimited, CountingScorer, Scorer, ScorerQuery, ScorerResponse, Wants};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("capability error: {0}")]
    Capability(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("sequence of length {len} exceeds context {cap}")]
    ContextOverflow { len: usize, cap: usize },
    #[error("profile has no row for position {0}")]
    Coverage(usize),
    #[error("row at position {position} sums to {sum}")]
    NotNormalized { position: usize, sum: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("protocol version skew: client speaks {client}, server answered {server}")]
    VersionSkew { client: u32, server: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("at position {position}: {source}")]
    AtPosition {
        position: usize,
        #[source]
        source: Box<ScoreError>,
    },
    #[error(transparent)]
    Seq(#[from] SeqError),
}

impl ScoreError {
    pub fn at_position(self, position: usize) -> Self {
        match self {
            e @ ScoreError::AtPosition { .. } => e,
            e => ScoreError::AtPosition {
                position,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, with position wrappers removed.
    pub fn root(&self) -> &ScoreError {
        match self {
            ScoreError::AtPosition { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_context_overflow(&self) -> bool {
        matches!(self.root(), ScoreError::ContextOverflow { .. })
    }

    pub fn is_capability(&self) -> bool {
        matches!(self.root(), ScoreError::Capability(_))
    }
}
