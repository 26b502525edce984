use serde::{Deserialize, Serialize};

use super::{DistributionMatrix, ScoreError, Scorer};
use crate::seqcore::{Sequence, Span};

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// A perplexity value plus the positions whose true-symbol probability
/// had to be clamped at [`PROB_FLOOR`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    pub value: f64,
    pub floored: Vec<usize>,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `exp` of the mean negative log-probability, with clamping.
pub fn perplexity_from_probs(probs: impl IntoIterator<Item = (usize, f64)>) -> Perplexity {
    let mut nll = CompensatedSum::default();
    let mut n = 0usize;
    let mut floored = Vec::new();
    for (pos, p) in probs {
        let p = if p < PROB_FLOOR || p.is_nan() {
            floored.push(pos);
            PROB_FLOOR
        } else {
            p
        };
        nll.add(-p.ln());
        n += 1;
    }
    let value = if n == 0 { f64::NAN } else { (nll.value() / n as f64).exp() };
    Perplexity { value, floored }
}

/// Pseudo-perplexity of `x` under `profile`, over `span` or the whole sequence.
pub fn pseudo_perplexity(
    profile: &DistributionMatrix,
    x: &Sequence,
    span: Option<Span>,
) -> Result<Perplexity, ScoreError> {
    let span = span.unwrap_or_else(|| x.full_span());
    span.check(x.len())?;
    let mut probs = Vec::with_capacity(span.len());
    for pos in span.positions() {
        let row = profile.at(pos).ok_or(ScoreError::Coverage(pos))?;
        probs.push((pos, row[x.get(pos) as usize]));
    }
    Ok(perplexity_from_probs(probs))
}

/// Shannon entropy in nats, with 0·ln 0 = 0.
pub fn entropy(row: &[f64]) -> f64 {
    let mut h = CompensatedSum::default();
    for &p in row {
        if p > 0.0 {
            h.add(-p * p.ln());
        }
    }
    h.value().max(0.0)
}

/// Left-to-right perplexity from a causal scorer.
pub fn causal_perplexity(scorer: &dyn Scorer, x: &Sequence) -> Result<Perplexity, ScoreError> {
    if !scorer.capabilities().causal {
        return Err(ScoreError::Capability(format!(
            "{} does not declare causal scoring",
            scorer.name()
        )));
    }
    let rows = scorer.next_symbol_distributions(x)?;
    let probs = (0..x.len())
        .map(|i| {
            rows.at(i)
                .map(|r| (i, r[x.get(i) as usize]))
                .ok_or(ScoreError::Coverage(i))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(perplexity_from_probs(probs))
}

/// Per-sequence summary: global and local pseudo-perplexity plus mean entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub pppl: f64,
    pub local_pppl: Vec<(Span, f64)>,
    pub mean_entropy: f64,
    pub floored: Vec<usize>,
}

pub fn summarize(profile: &DistributionMatrix, x: &Sequence, spans: &[Span]) -> Result<ScoreSummary, ScoreError> {
    let whole = pseudo_perplexity(profile, x, None)?;
    let local_pppl = spans
        .iter()
        .map(|&s| pseudo_perplexity(profile, x, Some(s)).map(|p| (s, p.value)))
        .collect::<Result<_, _>>()?;
    let mut h = CompensatedSum::default();
    for pos in 0..x.len() {
        h.add(entropy(profile.at(pos).ok_or(ScoreError::Coverage(pos))?));
    }
    Ok(ScoreSummary {
        pppl: whole.value,
        local_pppl,
        mean_entropy: h.value() / x.len() as f64,
        floored: whole.floored,
    })
}

/// Mean KL(a‖b) and mean total-variation distance between two profiles
/// over their shared positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileDivergence {
    pub mean_kl: f64,
    pub mean_total_variation: f64,
    pub positions: usize,
}

pub fn profile_divergence(a: &DistributionMatrix, b: &DistributionMatrix) -> ProfileDivergence {
    let mut kl = CompensatedSum::default();
    let mut tv = CompensatedSum::default();
    let mut n = 0usize;
    for (k, &pos) in a.positions().iter().enumerate() {
        let Some(rb) = b.at(pos) else { continue };
        let ra = a.row(k);
        let mut row_kl = 0.0;
        let mut row_tv = 0.0;
        for (&p, &q) in ra.iter().zip(rb) {
            if p > 0.0 {
                row_kl += p * (p / q.max(PROB_FLOOR)).ln();
            }
            row_tv += (p - q).abs();
        }
        kl.add(row_kl);
        tv.add(0.5 * row_tv);
        n += 1;
    }
    let d = n.max(1) as f64;
    ProfileDivergence {
        mean_kl: kl.value() / d,
        mean_total_variation: tv.value() / d,
        positions: n,
    }
}
