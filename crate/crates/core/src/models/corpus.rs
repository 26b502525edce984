//! Synthetic training corpora: positional-profile families, optionally with
//! one internally duplicated segment per sequence.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seqcore::rng::{derive_seed, task_rng, ToolRng};
use crate::seqcore::{Alphabet, SeqError, Sequence, Span};

pub const MAX_PLACEMENT_TRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub alphabet: String,
    pub n_families: usize,
    pub dup_fraction: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub min_segment: usize,
    pub max_segment: usize,
    /// Upper bound on the offset between the two copies, if any.
    #[serde(default)]
    pub max_gap: Option<usize>,
    /// Exponent applied to the flat Dirichlet draws of each profile row;
    /// larger values give more conserved positions.
    pub profile_sharpness: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            alphabet: "protein".into(),
            n_families: 8,
            dup_fraction: 0.5,
            min_len: 32,
            max_len: 96,
            min_segment: 8,
            max_segment: 32,
            max_gap: None,
            profile_sharpness: 1.0,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), SeqError> {
        let bad = |m: &str| Err(SeqError::InvalidArgument(m.into()));
        if !(0.0..=1.0).contains(&self.dup_fraction) {
            return bad("dup_fraction must lie in [0, 1]");
        }
        if self.n_families == 0 {
            return bad("need at least one profile family");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("length range must satisfy 1 <= min_len <= max_len");
        }
        if self.min_segment == 0 || self.min_segment > self.max_segment {
            return bad("segment range must satisfy 1 <= min_segment <= max_segment");
        }
        if self.dup_fraction > 0.0 && 2 * self.min_segment > self.max_len {
            return bad("two copies of the shortest segment do not fit in the longest sequence");
        }
        if self.max_gap.is_some_and(|g| g < self.min_segment) {
            return bad("max_gap must be at least min_segment");
        }
        if !(self.profile_sharpness.is_finite() && self.profile_sharpness >= 0.0) {
            return bad("profile sharpness must be finite and nonnegative");
        }
        Ok(())
    }

    pub fn alphabet(&self) -> Result<Arc<Alphabet>, SeqError> {
        Alphabet::by_name(&self.alphabet)
    }

    /// Per-position symbol distributions of every family, `max_len` rows each.
    pub fn family_profiles(&self) -> Result<Vec<Vec<Vec<f64>>>, SeqError> {
        self.validate()?;
        let width = self.alphabet()?.len();
        let mut rng = task_rng(derive_seed(self.seed, "families"), 0);
        Ok((0..self.n_families)
            .map(|_| {
                (0..self.max_len)
                    .map(|_| {
                        let w: Vec<f64> = (0..width)
                            .map(|_| (-(1.0 - rng.random::<f64>()).ln()).powf(self.profile_sharpness))
                            .collect();
                        let s: f64 = w.iter().sum();
                        w.into_iter().map(|v| v / s).collect()
                    })
                    .collect()
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub sequence: Sequence,
    pub family: usize,
    /// The two copies of the duplicated segment, if any.
    pub duplicate: Option<(Span, Span)>,
}

fn draw_from_row(rng: &mut ToolRng, row: &[f64]) -> u8 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k as u8;
        }
    }
    (row.len() - 1) as u8
}

fn place_pair(rng: &mut ToolRng, len: usize, seg: usize, max_gap: Option<usize>) -> Option<(usize, usize)> {
    if 2 * seg > len {
        return None;
    }
    let gap_ok = |g: usize| g >= seg && max_gap.is_none_or(|m| g <= m);
    for _ in 0..MAX_PLACEMENT_TRIES {
        let a = rng.random_range(0..=len - seg);
        let b = match max_gap {
            // sample the partner near `a` so short gaps stay feasible in long sequences
            Some(m) => {
                let lo = a.saturating_sub(m);
                let hi = (a + m).min(len - seg);
                rng.random_range(lo..=hi)
            }
            None => rng.random_range(0..=len - seg),
        };
        if gap_ok(a.abs_diff(b)) {
            return Some((a.min(b), a.max(b)));
        }
    }
    None
}

/// Draws `n` annotated sequences. Sequence `k` depends only on the spec and
/// `k`, so prefixes of larger corpora agree with smaller ones.
pub fn sample_corpus_annotated(spec: &CorpusSpec, n: usize) -> Result<Vec<CorpusEntry>, SeqError> {
    if n == 0 {
        return Err(SeqError::InvalidArgument("corpus size must be at least 1".into()));
    }
    let profiles = spec.family_profiles()?;
    let alphabet = spec.alphabet()?;
    let width = alphabet.len();
    let stream = derive_seed(spec.seed, "sequences");
    (0..n)
        .map(|k| {
            let mut rng = task_rng(stream, k as u64);
            let family = rng.random_range(0..spec.n_families);
            let dup = rng.random::<f64>() < spec.dup_fraction;
            let (len, placement) = loop {
                let len = rng.random_range(spec.min_len..=spec.max_len);
                if !dup {
                    break (len, None);
                }
                let hi = spec.max_segment.min(len / 2).min(spec.max_gap.unwrap_or(usize::MAX));
                let seg = rng.random_range(spec.min_segment..=hi.max(spec.min_segment));
                if let Some((a, b)) = place_pair(&mut rng, len, seg, spec.max_gap) {
                    break (len, Some((a, b, seg)));
                }
            };
            let mut symbols: Vec<u8> = profiles[family][..len]
                .iter()
                .map(|row| draw_from_row(&mut rng, row))
                .collect();
            let duplicate = placement.map(|(a, b, seg)| {
                for t in 0..seg {
                    let s = rng.random_range(0..width) as u8;
                    symbols[a + t] = s;
                    symbols[b + t] = s;
                }
                (Span::new(a, a + seg), Span::new(b, b + seg))
            });
            Ok(CorpusEntry {
                sequence: Sequence::new(format!("synthetic_{k}"), symbols, alphabet.clone())?,
                family,
                duplicate,
            })
        })
        .collect()
}

pub fn sample_corpus(spec: &CorpusSpec, n: usize) -> Result<Vec<Sequence>, SeqError> {
    Ok(sample_corpus_annotated(spec, n)?.into_iter().map(|e| e.sequence).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn has_repeat(x: &[u8], k: usize) -> bool {
        (0..=x.len() - k).any(|i| (i + k..=x.len() - k).any(|j| x[i..i + k] == x[j..j + k]))
    }

    #[test]
    fn full_duplication_always_leaves_a_repeat() {
        let spec = CorpusSpec { dup_fraction: 1.0, seed: 3, ..CorpusSpec::default() };
        for e in sample_corpus_annotated(&spec, 50).unwrap() {
            let (a, b) = e.duplicate.unwrap();
            assert!(a.end <= b.start);
            assert!(has_repeat(e.sequence.symbols(), spec.min_segment));
            let s = e.sequence.symbols();
            assert_eq!(s[a.start..a.end], s[b.start..b.end]);
        }
    }

    #[test]
    fn gap_bound_is_respected() {
        let spec = CorpusSpec { dup_fraction: 1.0, min_len: 16, max_len: 64, min_segment: 4, max_segment: 8, max_gap: Some(8), seed: 2, ..CorpusSpec::default() };
        for e in sample_corpus_annotated(&spec, 200).unwrap() {
            let (a, b) = e.duplicate.unwrap();
            assert!(b.start - a.start <= 8 && b.start >= a.end);
        }
    }

    #[test]
    fn single_family_frequencies_converge_to_profile() {
        let spec = CorpusSpec {
            n_families: 1,
            dup_fraction: 0.0,
            min_len: 10,
            max_len: 10,
            profile_sharpness: 2.0,
            seed: 9,
            ..CorpusSpec::default()
        };
        let profile = &spec.family_profiles().unwrap()[0];
        let n = 6000;
        let corpus = sample_corpus(&spec, n).unwrap();
        for pos in [0, 4, 9] {
            for sym in 0..20 {
                let p = profile[pos][sym];
                let freq = corpus.iter().filter(|s| s.get(pos) == sym as u8).count() as f64 / n as f64;
                // 5 standard errors, plus slack for rare symbols
                let tol = 5.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-3;
                assert!((freq - p).abs() < tol, "pos {pos} sym {sym}: {freq} vs {p}");
            }
        }
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let spec = CorpusSpec::default();
        let a = sample_corpus(&spec, 20).unwrap();
        let b = sample_corpus(&spec, 30).unwrap();
        assert_eq!(a[..], b[..20]);
        let c = sample_corpus(&CorpusSpec { seed: 1, ..spec }, 20).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(sample_corpus(&CorpusSpec { dup_fraction: 1.5, ..CorpusSpec::default() }, 1).is_err());
        assert!(sample_corpus(&CorpusSpec { min_len: 50, max_len: 40, ..CorpusSpec::default() }, 1).is_err());
        assert!(sample_corpus(&CorpusSpec::default(), 0).is_err());
    }
}
