use crate::scoring::{
    Capabilities, DistributionMatrix, ScoreError, Scorer, ScorerQuery, ScorerResponse,
};
use crate::seqcore::Sequence;

/// Predicts the uniform distribution everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformScorer;

impl Scorer for UniformScorer {
    fn name(&self) -> String {
        "uniform".into()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            causal: true,
            ..Capabilities::distributions_only()
        }
    }

    fn score_batch(&self, queries: &[ScorerQuery<'_>]) -> Result<Vec<ScorerResponse>, ScoreError> {
        Ok(queries
            .iter()
            .map(|q| ScorerResponse {
                distributions: q.wants.distributions.then(|| {
                    DistributionMatrix::uniform(q.sequence.alphabet().len(), q.covered_positions())
                }),
                embeddings: None,
            })
            .collect())
    }

    fn next_symbol_distributions(&self, x: &Sequence) -> Result<DistributionMatrix, ScoreError> {
        Ok(DistributionMatrix::uniform(x.alphabet().len(), (0..x.len()).collect()))
    }
}

/// Predicts a fixed background composition everywhere, ignoring context.
#[derive(Debug, Clone, PartialEq)]
pub struct UnigramScorer {
    freqs: Vec<f64>,
}

impl UnigramScorer {
    pub fn new(freqs: Vec<f64>) -> Result<Self, ScoreError> {
        let sum: f64 = freqs.iter().sum();
        if freqs.len() < 2 || freqs.iter().any(|f| !f.is_finite() || *f < 0.0) || sum <= 0.0 {
            return Err(ScoreError::Model("unigram frequencies must be nonnegative with a positive sum".into()));
        }
        Ok(Self {
            freqs: freqs.into_iter().map(|f| f / sum).collect(),
        })
    }

    /// Symbol composition of a corpus with an additive pseudocount.
    pub fn fit(corpus: &[Sequence], pseudocount: f64) -> Result<Self, ScoreError> {
        let first = corpus
            .first()
            .ok_or_else(|| ScoreError::Model("cannot fit a unigram model to an empty corpus".into()))?;
        let mut counts = vec![pseudocount; first.alphabet().len()];
        for s in corpus {
            for &c in s.symbols() {
                counts[c as usize] += 1.0;
            }
        }
        Self::new(counts)
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    fn rows(&self, width: usize, positions: Vec<usize>) -> Result<DistributionMatrix, ScoreError> {
        if width != self.freqs.len() {
            return Err(ScoreError::Shape(format!(
                "unigram model has {} symbols, query alphabet has {width}",
                self.freqs.len()
            )));
        }
        let data = positions.iter().flat_map(|_| self.freqs.iter().copied()).collect();
        DistributionMatrix::new(width, positions, data)
    }
}

impl Scorer for UnigramScorer {
    fn name(&self) -> String {
        "unigram".into()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            causal: true,
            ..Capabilities::distributions_only()
        }
    }

    fn score_batch(&self, queries: &[ScorerQuery<'_>]) -> Result<Vec<ScorerResponse>, ScoreError> {
        queries
            .iter()
            .map(|q| {
                let distributions = if q.wants.distributions {
                    Some(self.rows(q.sequence.alphabet().len(), q.covered_positions())?)
                } else {
                    None
                };
                Ok(ScorerResponse {
                    distributions,
                    embeddings: None,
                })
            })
            .collect()
    }

    fn next_symbol_distributions(&self, x: &Sequence) -> Result<DistributionMatrix, ScoreError> {
        self.rows(x.alphabet().len(), (0..x.len()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{causal_perplexity, ofs_profile, one_at_a_time_profile, pseudo_perplexity, CountingScorer, ProfileOptions};
    use crate::seqcore::{random_sequence, Alphabet};

    #[test]
    fn uniform_profiles_agree_exactly() {
        let x = random_sequence(37, &Alphabet::protein(), 1).unwrap();
        let a = one_at_a_time_profile(&UniformScorer, &x, ProfileOptions::default()).unwrap();
        let b = ofs_profile(&UniformScorer, &x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 37);
        assert!(a.rows().all(|r| r.iter().all(|&p| p == 0.05)));
        let pppl = pseudo_perplexity(&a, &x, None).unwrap().value;
        assert!((pppl - 20.0).abs() < 1e-12);
        assert!((causal_perplexity(&UniformScorer, &x).unwrap().value - 20.0).abs() < 1e-12);
    }

    #[test]
    fn query_counts_follow_batching() {
        let x = random_sequence(130, &Alphabet::protein(), 1).unwrap();
        let c = CountingScorer::new(UniformScorer);
        one_at_a_time_profile(&c, &x, ProfileOptions::default()).unwrap();
        assert_eq!(c.queries(), 130);
        assert_eq!(c.batches(), 3);
        let c = CountingScorer::new(UniformScorer);
        ofs_profile(&c, &x).unwrap();
        assert_eq!(c.queries(), 1);
    }

    #[test]
    fn unigram_fit_and_width_check() {
        let p = Alphabet::protein();
        let corpus = vec![Sequence::from_text("a", "AAAC", p.clone()).unwrap()];
        let u = UnigramScorer::fit(&corpus, 0.0).unwrap();
        assert_eq!(u.freqs()[0], 0.75);
        let rna = random_sequence(5, &Alphabet::rna(), 1).unwrap();
        assert!(ofs_profile(&u, &rna).is_err());
    }
}
