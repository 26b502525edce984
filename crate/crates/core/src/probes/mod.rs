//! Probe runners. Each builds sequences, queries a [`Scorer`] and returns a
//! [`ProbeReport`] whose content depends only on the scorer, config and seed.

mod collapse;
mod context;
mod masking;
mod report;
mod score;
mod svg;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::{
    ofs_profile, one_at_a_time_profile, DistributionMatrix, ProfileOptions, ScoreError, Scorer,
};
use crate::seqcore::rng::{derive_seed, task_rng};
use crate::seqcore::{random_sequence, Alphabet, SeqError, Sequence};

pub use collapse::{run_doubling, run_multiplicity_sweep, DoublingConfig, SweepConfig};
pub use context::{
    run_context_transform, run_imperfect_repeat, run_needle_haystack, run_skip, ContextTransform,
    ContextTransformConfig, ImperfectRepeatConfig, NeedleConfig, SkipConfig,
};
pub use masking::{
    run_contralateral, run_equivalent_mask, run_flip_matrix, ContralateralConfig, EntropyQuartet,
    EquivalentMaskConfig, FlipConfig, FlipMatrix, PreferenceCurve, PreferencePoint,
};
pub use report::{Plot, ProbeReport, Provenance, Row, RunSidecar, REPORT_SCHEMA_VERSION};
pub use score::{ids_above, run_score, ScoreConfig};
pub use svg::{heatmap_svg, quantile_bands_svg};
pub(crate) use report::atomic_write;
pub(crate) use svg::line_svg;

pub const PROBE_NAMES: [&str; 9] = [
    "doubling",
    "multiplicity_sweep",
    "equivalent_mask",
    "flip_matrix",
    "contralateral",
    "imperfect_repeat",
    "needle_haystack",
    "skip",
    "context_transform",
];

/// Label stored in rows that were skipped because the scorer's context is
/// too short for the constructed sequence.
pub const EXCEEDS_CONTEXT: &str = "exceeds context";

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("invalid probe config: {0}")]
    Config(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing report: {0}")]
    Csv(#[from] csv::Error),
}

impl ProbeError {
    pub fn is_capability(&self) -> bool {
        matches!(self, ProbeError::Score(e) if e.is_capability())
    }
}

/// How per-position distributions are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileMode {
    /// One query per position, with only that position masked.
    #[default]
    OneAtATime,
    /// One unmasked query per sequence.
    Ofs,
}

impl ProfileMode {
    pub fn profile(self, scorer: &dyn Scorer, x: &Sequence) -> Result<DistributionMatrix, ScoreError> {
        match self {
            ProfileMode::OneAtATime => one_at_a_time_profile(scorer, x, ProfileOptions::default()),
            ProfileMode::Ofs => ofs_profile(scorer, x),
        }
    }
}

/// Seed for sample `k` of any probe drawing from `seed`. Shared by all
/// probes so the same (seed, k, length) always yields the same sequence.
pub fn sample_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, &format!("sample-{k}"))
}

/// `n` uniform random sequences with lengths drawn uniformly from
/// `[min_len, max_len]`. Sequence `k` depends only on `(seed, k)`.
pub fn random_corpus(
    n: usize,
    min_len: usize,
    max_len: usize,
    alphabet: &Arc<Alphabet>,
    seed: u64,
) -> Result<Vec<Sequence>, SeqError> {
    if min_len == 0 || min_len > max_len {
        return Err(SeqError::InvalidArgument("length range must satisfy 1 <= min <= max".into()));
    }
    let lengths = derive_seed(seed, "lengths");
    (0..n)
        .map(|k| {
            let len = if min_len == max_len {
                min_len
            } else {
                task_rng(lengths, k as u64).random_range(min_len..=max_len)
            };
            Ok(random_sequence(len, alphabet, sample_seed(seed, k))?.with_id(format!("random-{k}")))
        })
        .collect()
}

/// Up to `k` evenly spaced positions in `1..len-1` (both ends excluded).
pub fn interior_positions(len: usize, k: usize) -> Vec<usize> {
    if len < 3 || k == 0 {
        return Vec::new();
    }
    let (lo, hi) = (1usize, len - 2);
    let n = hi - lo + 1;
    if n <= k {
        return (lo..=hi).collect();
    }
    if k == 1 {
        return vec![lo + (n - 1) / 2];
    }
    let mut out: Vec<usize> = (0..k)
        .map(|t| lo + ((t * (n - 1)) as f64 / (k - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

/// Running mean that leaves a constant input stream bitwise unchanged.
#[derive(Debug, Clone, Default)]
pub(crate) struct RunningMean {
    mean: Vec<f64>,
    n: usize,
}

impl RunningMean {
    pub fn new(width: usize) -> Self {
        Self { mean: vec![0.0; width], n: 0 }
    }

    pub fn push(&mut self, row: &[f64]) {
        self.n += 1;
        if self.n == 1 {
            self.mean.copy_from_slice(row);
            return;
        }
        let k = self.n as f64;
        for (m, &v) in self.mean.iter_mut().zip(row) {
            *m += (v - *m) / k;
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile of the finite values; NaN if none.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub(crate) fn check_positive(name: &str, v: usize) -> Result<(), ProbeError> {
    if v == 0 {
        return Err(ProbeError::Config(format!("{name} must be at least 1")));
    }
    Ok(())
}

/// Runs `f`, turning a context overflow into `Ok(None)`.
pub(crate) fn unless_overflow<T>(r: Result<T, ScoreError>) -> Result<Option<T>, ScoreError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_context_overflow() => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interior_positions_are_spaced_and_exclude_ends() {
        assert_eq!(interior_positions(10, 8), (1..=8).collect::<Vec<_>>());
        assert_eq!(interior_positions(100, 2), vec![1, 98]);
        assert_eq!(interior_positions(2, 8), Vec::<usize>::new());
        let p = interior_positions(200, 8);
        assert_eq!(p.len(), 8);
        assert!(p.windows(2).all(|w| w[1] - w[0] >= 27 && w[1] - w[0] <= 29));
    }

    #[test]
    fn random_corpus_is_stable_across_sizes_and_lengths() {
        let p = Alphabet::protein();
        let a = random_corpus(5, 30, 30, &p, 7).unwrap();
        let b = random_corpus(9, 30, 30, &p, 7).unwrap();
        assert_eq!(a[..], b[..5]);
        let c = random_corpus(40, 50, 300, &p, 7).unwrap();
        assert!(c.iter().all(|s| (50..=300).contains(&s.len())));
        assert!(c.iter().any(|s| s.len() != c[0].len()));
    }

    #[test]
    fn quantiles_interpolate() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), 2.5);
        assert!(median(&[f64::NAN]).is_nan());
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
    }

    proptest! {
        #[test]
        fn running_mean_of_constant_rows_is_exact(v in 0.0f64..1.0, n in 1usize..200) {
            let mut m = RunningMean::new(1);
            for _ in 0..n {
                m.push(&[v]);
            }
            prop_assert_eq!(m.mean()[0].to_bits(), v.to_bits());
        }

        #[test]
        fn running_mean_matches_plain_mean(xs in proptest::collection::vec(-1.0f64..1.0, 1..50)) {
            let mut m = RunningMean::new(1);
            for &x in &xs {
                m.push(&[x]);
            }
            let plain = xs.iter().sum::<f64>() / xs.len() as f64;
            prop_assert!((m.mean()[0] - plain).abs() < 1e-12);
        }
    }
}
