//! Corpus scoring: one pseudo-perplexity per sequence, and the threshold
//! filter used to drop sequences a model already finds predictable.

use serde::{Deserialize, Serialize};

use super::{unless_overflow, Plot, ProbeError, ProbeReport, ProfileMode, Row, EXCEEDS_CONTEXT};
use crate::scoring::{par_map, pseudo_perplexity, CountingScorer, Scorer};
use crate::seqcore::Sequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub mode: ProfileMode,
    /// Recorded for provenance; scoring itself draws no randomness.
    pub seed: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { mode: ProfileMode::OneAtATime, seed: 0 }
    }
}

/// Rows keyed by id with metrics `len`, `pppl` and `floored`.
pub fn run_score(scorer: &dyn Scorer, corpus: &[Sequence], cfg: &ScoreConfig) -> Result<ProbeReport, ProbeError> {
    if corpus.is_empty() {
        return Err(ProbeError::Config("corpus is empty".into()));
    }
    let counted = CountingScorer::new(scorer);
    let rows = par_map(corpus, |x| {
        let row = Row::new().key("id", x.id()).metric("len", x.len() as f64);
        let Some(profile) = unless_overflow(cfg.mode.profile(&counted, x))? else {
            return Ok(row.flagged(EXCEEDS_CONTEXT));
        };
        let p = pseudo_perplexity(&profile, x, None)?;
        Ok(row.metric("pppl", p.value).metric("floored", p.floored.len() as f64))
    })?;
    let mut report = ProbeReport::new("score", 1, scorer.name(), cfg, cfg.seed);
    report.rows = rows;
    report.plot = Some(Plot::Metrics { metrics: vec!["pppl".into()] });
    Ok(report.finish(counted.queries()))
}

/// Ids of scored rows whose pseudo-perplexity is strictly above `min`.
/// Flagged rows never pass.
pub fn ids_above(report: &ProbeReport, min: f64) -> Vec<String> {
    report
        .rows
        .iter()
        .filter(|r| r.flag.is_none() && r.get("pppl").is_some_and(|p| p > min))
        .filter_map(|r| r.key_value("id").map(str::to_string))
        .collect()
}
