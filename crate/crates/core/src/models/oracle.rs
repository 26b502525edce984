//! Analytic retrieval scorer.
//!
//! For a hidden position `i` the oracle compares the flank of `i` with the
//! flank of every other position `j`, offset by offset, and counts agreeing
//! symbols. Hidden positions and positions past either end never agree.
//! Candidates with the highest count win; if that count reaches
//! `min_match` and the unmasked winners all carry the same symbol, the
//! oracle is certain of that symbol. Anything else (no winner above the
//! threshold, winners that are all hidden, or winners that disagree) yields
//! the fallback distribution.
//!
//! With `contiguous` set, agreement is only counted outward from `i` up to
//! the first disagreement on each side, so only exact shared substrings can
//! trigger retrieval.

use serde::{Deserialize, Serialize};

use crate::scoring::{
    Capabilities, DistributionMatrix, ScoreError, Scorer, ScorerQuery, ScorerResponse,
};
use crate::seqcore::Sequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    Uniform,
    /// Add-one smoothed composition of the visible symbols in the query.
    Unigram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub flank: usize,
    pub min_match: usize,
    pub fallback: Fallback,
    pub contiguous: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            flank: 12,
            min_match: 12,
            fallback: Fallback::Uniform,
            contiguous: false,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.flank == 0 || self.min_match == 0 || self.min_match > 2 * self.flank {
            return Err(ScoreError::Model(format!(
                "oracle needs flank >= 1 and 1 <= min_match <= 2*flank (got flank {}, min_match {})",
                self.flank, self.min_match
            )));
        }
        Ok(())
    }

    pub fn strict(self) -> Self {
        Self {
            contiguous: true,
            ..self
        }
    }
}

/// What the oracle concluded at one position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleCall {
    Retrieved { symbol: u8, source: usize, score: usize },
    Fallback,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RetrievalOracle {
    cfg: OracleConfig,
}

impl RetrievalOracle {
    pub fn new(cfg: OracleConfig) -> Result<Self, ScoreError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    /// Flank agreement between positions `i` and `j`.
    pub fn flank_score(&self, symbols: &[u8], hidden: &[bool], i: usize, j: usize) -> usize {
        let len = symbols.len() as isize;
        let f = self.cfg.flank as isize;
        let agree = |d: isize| -> Option<bool> {
            let a = i as isize + d;
            let b = j as isize + d;
            if a < 0 || b < 0 || a >= len || b >= len {
                return None;
            }
            let (a, b) = (a as usize, b as usize);
            Some(!hidden[a] && !hidden[b] && symbols[a] == symbols[b])
        };
        let mut score = 0;
        for dir in [-1isize, 1] {
            for step in 1..=f {
                match agree(dir * step) {
                    Some(true) => score += 1,
                    _ if self.cfg.contiguous => break,
                    _ => {}
                }
            }
        }
        score
    }

    /// Decision at hidden position `i`.
    pub fn call(&self, symbols: &[u8], hidden: &[bool], i: usize) -> OracleCall {
        let mut best = 0usize;
        let mut winners: Vec<usize> = Vec::new();
        for j in 0..symbols.len() {
            if j == i {
                continue;
            }
            let s = self.flank_score(symbols, hidden, i, j);
            if s > best {
                best = s;
                winners.clear();
                winners.push(j);
            } else if s == best && s > 0 {
                winners.push(j);
            }
        }
        if best < self.cfg.min_match {
            return OracleCall::Fallback;
        }
        let mut visible = winners.iter().filter(|&&j| !hidden[j]);
        let Some(&first) = visible.next() else {
            return OracleCall::Fallback;
        };
        let symbol = symbols[first];
        if visible.any(|&j| symbols[j] != symbol) {
            return OracleCall::Fallback;
        }
        OracleCall::Retrieved {
            symbol,
            source: first,
            score: best,
        }
    }

    pub fn fallback_row(&self, symbols: &[u8], hidden: &[bool], width: usize) -> Vec<f64> {
        match self.cfg.fallback {
            Fallback::Uniform => vec![1.0 / width as f64; width],
            Fallback::Unigram => {
                let mut counts = vec![1.0; width];
                for (s, h) in symbols.iter().zip(hidden) {
                    if !h {
                        counts[*s as usize] += 1.0;
                    }
                }
                let total: f64 = counts.iter().sum();
                counts.into_iter().map(|c| c / total).collect()
            }
        }
    }

    fn predict(&self, x: &Sequence, masked: &[usize]) -> Result<DistributionMatrix, ScoreError> {
        let symbols = x.symbols();
        let width = x.alphabet().len();
        let mut hidden = vec![false; symbols.len()];
        for &m in masked {
            hidden[m] = true;
        }
        let positions: Vec<usize> = if masked.is_empty() {
            (0..symbols.len()).collect()
        } else {
            masked.to_vec()
        };
        let mut data = Vec::with_capacity(positions.len() * width);
        for &i in &positions {
            // a single-pass query still never reads the symbol being predicted
            let was_hidden = hidden[i];
            hidden[i] = true;
            match self.call(symbols, &hidden, i) {
                OracleCall::Retrieved { symbol, .. } => {
                    let mut row = vec![0.0; width];
                    row[symbol as usize] = 1.0;
                    data.extend(row);
                }
                OracleCall::Fallback => data.extend(self.fallback_row(symbols, &hidden, width)),
            }
            hidden[i] = was_hidden;
        }
        DistributionMatrix::new(width, positions, data)
    }
}

impl Scorer for RetrievalOracle {
    fn name(&self) -> String {
        let c = &self.cfg;
        format!(
            "oracle(flank={},min_match={},fallback={:?},contiguous={})",
            c.flank, c.min_match, c.fallback, c.contiguous
        )
        .to_lowercase()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::distributions_only()
    }

    fn score_batch(&self, queries: &[ScorerQuery<'_>]) -> Result<Vec<ScorerResponse>, ScoreError> {
        queries
            .iter()
            .map(|q| {
                if q.wants.embeddings {
                    return Err(ScoreError::Capability("the oracle has no embeddings".into()));
                }
                Ok(ScorerResponse {
                    distributions: Some(self.predict(q.sequence, q.masked())?),
                    embeddings: None,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{entropy, masked_row, ofs_profile, one_at_a_time_profile, pseudo_perplexity, ProfileOptions};
    use crate::seqcore::{make_skip_pair, multiply, random_sequence, Alphabet, SkipPhase};
    use proptest::prelude::*;

    fn oracle() -> RetrievalOracle {
        RetrievalOracle::default()
    }

    /// Independent brute-force reading of the oracle rule: for each shift,
    /// count equal flank pairs directly from the text.
    fn brute_force_symbol(text: &[u8], i: usize, flank: usize, min_match: usize) -> Option<u8> {
        let n = text.len() as isize;
        let mut scored: Vec<(usize, u8)> = Vec::new();
        for j in 0..text.len() {
            if j == i {
                continue;
            }
            let mut s = 0;
            for d in (-(flank as isize)..=flank as isize).filter(|d| *d != 0) {
                let (a, b) = (i as isize + d, j as isize + d);
                if a >= 0 && b >= 0 && a < n && b < n && a as usize != i && b as usize != i && text[a as usize] == text[b as usize] {
                    s += 1;
                }
            }
            scored.push((s, text[j]));
        }
        let best = scored.iter().map(|p| p.0).max()?;
        let mut syms: Vec<u8> = scored.iter().filter(|p| p.0 == best).map(|p| p.1).collect();
        syms.dedup();
        (best >= min_match && syms.iter().all(|&s| s == syms[0])).then(|| syms[0])
    }

    #[test]
    fn doubled_sequence_profile_is_one_hot() {
        let x = random_sequence(60, &Alphabet::protein(), 3).unwrap();
        let d = multiply(&x, 2).unwrap();
        let prof = one_at_a_time_profile(&oracle(), &d, ProfileOptions::default()).unwrap();
        for i in 0..d.len() {
            assert_eq!(brute_force_symbol(d.symbols(), i, 12, 12), Some(d.get(i)));
            assert_eq!(prof.at(i).unwrap()[d.get(i) as usize], 1.0, "position {i}");
        }
        assert_eq!(pseudo_perplexity(&prof, &d, None).unwrap().value, 1.0);
    }

    #[test]
    fn masking_both_copies_falls_back() {
        let x = random_sequence(40, &Alphabet::protein(), 4).unwrap();
        let d = multiply(&x, 2).unwrap();
        for i in [0, 7, 39] {
            let a = masked_row(&oracle(), &d, vec![i, i + 40], i).unwrap();
            let b = masked_row(&oracle(), &d, vec![i, i + 40], i + 40).unwrap();
            assert!(a.iter().all(|&p| p == 0.05));
            assert!(b.iter().all(|&p| p == 0.05));
        }
    }

    #[test]
    fn single_copy_falls_back() {
        let x = random_sequence(200, &Alphabet::protein(), 5).unwrap();
        let prof = ofs_profile(&oracle(), &x).unwrap();
        assert!(prof.rows().all(|r| r.iter().all(|&p| p == 0.05)));
        for i in (0..200).step_by(17) {
            assert_eq!(brute_force_symbol(x.symbols(), i, 12, 12), None);
        }
    }

    #[test]
    fn ofs_equals_one_at_a_time() {
        let x = random_sequence(30, &Alphabet::protein(), 6).unwrap();
        let d = multiply(&x, 3).unwrap();
        let a = ofs_profile(&oracle(), &d).unwrap();
        let b = one_at_a_time_profile(&oracle(), &d, ProfileOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_unmasked_copy_suffices() {
        let x = random_sequence(25, &Alphabet::protein(), 8).unwrap();
        let m = multiply(&x, 4).unwrap();
        // hide position 3 in three of the four copies
        let masked = vec![3, 28, 53];
        let row = masked_row(&oracle(), &m, masked, 3).unwrap();
        assert_eq!(row[x.get(3) as usize], 1.0);
    }

    #[test]
    fn skip_pairs_discriminate_contiguous_matching() {
        let x = random_sequence(60, &Alphabet::protein(), 9).unwrap();
        let y = make_skip_pair(&x, SkipPhase::Even, 9).unwrap();
        let pair = x.concat(&y, "pair").unwrap();
        let loose = ofs_profile(&oracle(), &pair).unwrap();
        let strict_oracle = RetrievalOracle::new(OracleConfig::default().strict()).unwrap();
        let strict = ofs_profile(&strict_oracle, &pair).unwrap();
        // interior of the first copy retrieves the aligned symbol of the partner
        for i in 12..48 {
            assert_eq!(loose.at(i).unwrap()[y.get(i) as usize], 1.0, "loose at {i}");
            assert!(strict.at(i).unwrap().iter().all(|&p| p == 0.05), "strict at {i}");
        }
    }

    #[test]
    fn unigram_fallback_counts_visible_symbols() {
        let cfg = OracleConfig { fallback: Fallback::Unigram, ..OracleConfig::default() };
        let o = RetrievalOracle::new(cfg).unwrap();
        let x = Sequence::from_text("x", "AAAC", Alphabet::protein()).unwrap();
        let row = masked_row(&o, &x, vec![3], 3).unwrap();
        assert!((row[0] - 4.0 / 23.0).abs() < 1e-15);
        assert!((entropy(&row) - entropy(&row)).abs() == 0.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(RetrievalOracle::new(OracleConfig { flank: 0, ..OracleConfig::default() }).is_err());
        assert!(RetrievalOracle::new(OracleConfig { flank: 3, min_match: 7, ..OracleConfig::default() }).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn relabeling_symbols_permutes_output(seed in 0u64..1000, shift in 1u8..20) {
            let x = random_sequence(30, &Alphabet::protein(), seed).unwrap();
            let d = multiply(&x, 2).unwrap();
            let relabel = |s: u8| (s + shift) % 20;
            let dr = Sequence::new("r", d.symbols().iter().map(|&s| relabel(s)).collect(), d.alphabet().clone()).unwrap();
            let a = ofs_profile(&oracle(), &d).unwrap();
            let b = ofs_profile(&oracle(), &dr).unwrap();
            for i in 0..d.len() {
                for s in 0..20u8 {
                    prop_assert_eq!(a.at(i).unwrap()[s as usize], b.at(i).unwrap()[relabel(s) as usize]);
                }
            }
        }
    }
}
