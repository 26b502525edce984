//! Repeat-driven collapse: doubling a corpus, and sweeping unit size
//! against multiplicity on random units.

use serde::{Deserialize, Serialize};

use super::{
    check_positive, random_corpus, unless_overflow, Plot, ProbeError, ProbeReport, ProfileMode, Row,
    EXCEEDS_CONTEXT,
};
use crate::scoring::{par_map, pseudo_perplexity, CountingScorer, ScoreError, Scorer};
use crate::seqcore::{multiply, Alphabet, Sequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoublingConfig {
    pub multiplicity: usize,
    pub mode: ProfileMode,
    /// Recorded for provenance; the corpus is supplied by the caller.
    pub seed: u64,
}

impl Default for DoublingConfig {
    fn default() -> Self {
        Self { multiplicity: 2, mode: ProfileMode::OneAtATime, seed: 0 }
    }
}

fn pppl_row(scorer: &dyn Scorer, mode: ProfileMode, x: &Sequence) -> Result<Option<(f64, usize)>, ScoreError> {
    let Some(profile) = unless_overflow(mode.profile(scorer, x))? else {
        return Ok(None);
    };
    let p = pseudo_perplexity(&profile, x, None)?;
    Ok(Some((p.value, p.floored.len())))
}

/// Pseudo-perplexity of each sequence alone and repeated `multiplicity` times.
pub fn run_doubling(scorer: &dyn Scorer, corpus: &[Sequence], cfg: &DoublingConfig) -> Result<ProbeReport, ProbeError> {
    if corpus.is_empty() {
        return Err(ProbeError::Config("corpus is empty".into()));
    }
    if cfg.multiplicity < 2 {
        return Err(ProbeError::Config("multiplicity must be at least 2".into()));
    }
    let counted = CountingScorer::new(scorer);
    let n = cfg.multiplicity;
    let rows = par_map(corpus, |x| {
        let base = Row::new().key("id", x.id()).metric("len", x.len() as f64);
        let single = pppl_row(&counted, cfg.mode, x)?;
        let repeated = pppl_row(&counted, cfg.mode, &multiply(x, n)?)?;
        Ok(match (single, repeated) {
            (Some((a, fa)), Some((b, fb))) => base
                .metric("pppl_1x", a)
                .metric(&format!("pppl_{n}x"), b)
                .metric("floored_1x", fa as f64)
                .metric(&format!("floored_{n}x"), fb as f64),
            (Some((a, fa)), None) => base
                .metric("pppl_1x", a)
                .metric("floored_1x", fa as f64)
                .flagged(EXCEEDS_CONTEXT),
            _ => base.flagged(EXCEEDS_CONTEXT),
        })
    })?;
    let mut report = ProbeReport::new("doubling", 1, scorer.name(), cfg, cfg.seed);
    report.rows = rows;
    report.plot = Some(Plot::Metrics { metrics: vec!["pppl_1x".into(), format!("pppl_{n}x")] });
    Ok(report.finish(counted.queries()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub unit_sizes: Vec<usize>,
    pub multiplicities: Vec<usize>,
    pub alphabet: String,
    pub n_samples: usize,
    pub mode: ProfileMode,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self::long_units()
    }
}

impl SweepConfig {
    /// Units of 20, 70 and 100 at 1x, 2x and 4x.
    pub fn long_units() -> Self {
        Self {
            unit_sizes: vec![20, 70, 100],
            multiplicities: vec![1, 2, 4],
            alphabet: "protein".into(),
            n_samples: 20,
            mode: ProfileMode::OneAtATime,
            seed: 0,
        }
    }

    /// Units of 5 to 9 at multiplicities up to 32x.
    pub fn short_units() -> Self {
        Self {
            unit_sizes: (5..=9).collect(),
            multiplicities: vec![1, 2, 4, 8, 16, 32],
            ..Self::long_units()
        }
    }
}

/// Pseudo-perplexity of random units repeated at each multiplicity. Sample
/// `k` of every unit size reuses the seed of sample `k` in
/// [`random_corpus`], so the 2x cells match a doubling run on that corpus.
pub fn run_multiplicity_sweep(scorer: &dyn Scorer, cfg: &SweepConfig) -> Result<ProbeReport, ProbeError> {
    check_positive("n_samples", cfg.n_samples)?;
    if cfg.unit_sizes.is_empty() || cfg.multiplicities.is_empty() {
        return Err(ProbeError::Config("unit sizes and multiplicities must be non-empty".into()));
    }
    if cfg.unit_sizes.contains(&0) || cfg.multiplicities.contains(&0) {
        return Err(ProbeError::Config("unit sizes and multiplicities must be positive".into()));
    }
    let alphabet = Alphabet::by_name(&cfg.alphabet)?;
    let cap = scorer.capabilities().max_len;
    let counted = CountingScorer::new(scorer);
    let mut items = Vec::new();
    for &u in &cfg.unit_sizes {
        let units = random_corpus(cfg.n_samples, u, u, &alphabet, cfg.seed)?;
        for &m in &cfg.multiplicities {
            for (k, x) in units.iter().enumerate() {
                items.push((u, m, k, x.clone()));
            }
        }
    }
    let rows = par_map(&items, |(u, m, k, x)| {
        let row = Row::new().key("unit", u).key("multiplicity", m).key("sample", k);
        let len = u * m;
        if cap.is_some_and(|c| len > c) {
            return Ok(row.flagged(EXCEEDS_CONTEXT));
        }
        let seq = if *m == 1 { x.clone() } else { multiply(x, *m)? };
        Ok(match pppl_row(&counted, cfg.mode, &seq)? {
            Some((p, floored)) => row.metric("pppl", p).metric("floored", floored as f64),
            None => row.flagged(EXCEEDS_CONTEXT),
        })
    })?;
    let mut report = ProbeReport::new("multiplicity_sweep", 1, scorer.name(), cfg, cfg.seed);
    report.rows = rows;
    report.plot = Some(Plot::Heatmap { row_key: "unit".into(), col_key: "multiplicity".into(), metric: "pppl".into() });
    Ok(report.finish(counted.queries()))
}
