//! Embedding-quality regression: how well do per-residue embeddings of a
//! sequence predict that sequence's masked profile, and how does that
//! change when the sequence is repeated or padded with random residues?

mod mlp;
mod regress;

use std::collections::HashSet;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probes::ProfileMode;
use crate::scoring::{par_map, ScoreError, Scorer, ScorerQuery, Wants};
use crate::seqcore::rng::{derive_seed, seeded};
use crate::seqcore::{multiply, random_sequence_with, SeqError, Sequence};

pub use mlp::{fit_mlp, EpochRow, FitOutcome, Mlp, MlpSpec};
pub use regress::{train_and_evaluate, GroupSummary, LossRow, RegressionConfig, RegressionReport, SplitOutcome};

/// Sequences must be shorter than this to enter the regression.
pub const MAX_BASE_LEN: usize = 200;

/// Window used to check that random control tails do not copy the unit.
const COPY_WINDOW: usize = 12;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid regression config: {0}")]
    Config(String),
    #[error("loss became non-finite even at learning rate {learning_rate}")]
    NonFinite { learning_rate: f64 },
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error("writing results: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing results: {0}")]
    Csv(#[from] csv::Error),
}

impl EmbedError {
    pub fn is_capability(&self) -> bool {
        matches!(self, EmbedError::Score(e) if e.is_capability())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "n")]
pub enum GroupSpec {
    Baseline,
    Multiplicity(usize),
    Control(usize),
    OneHot,
}

impl GroupSpec {
    /// Baseline, multiplicity 2 to 5, control 2 to 5, one-hot.
    pub fn standard() -> Vec<GroupSpec> {
        let mut g = vec![GroupSpec::Baseline];
        g.extend((2..=5).map(GroupSpec::Multiplicity));
        g.extend((2..=5).map(GroupSpec::Control));
        g.push(GroupSpec::OneHot);
        g
    }

    pub fn label(self) -> String {
        match self {
            GroupSpec::Baseline => "baseline-1x".into(),
            GroupSpec::Multiplicity(n) => format!("multiplicity-{n}x"),
            GroupSpec::Control(n) => format!("control-{n}x"),
            GroupSpec::OneHot => "one-hot".into(),
        }
    }

    pub fn parse(s: &str) -> Option<GroupSpec> {
        let n = |p: &str| s.strip_prefix(p)?.strip_suffix('x')?.parse().ok();
        match s {
            "baseline-1x" => Some(GroupSpec::Baseline),
            "one-hot" => Some(GroupSpec::OneHot),
            _ => n("multiplicity-")
                .map(GroupSpec::Multiplicity)
                .or_else(|| n("control-").map(GroupSpec::Control)),
        }
    }

    fn uses_embeddings(self) -> bool {
        self != GroupSpec::OneHot
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// The variants of one base sequence, in group order.
#[derive(Debug, Clone)]
pub struct GroupSequences {
    pub base: Sequence,
    pub variants: Vec<(GroupSpec, Sequence)>,
}

fn kmers(s: &[u8], k: usize) -> HashSet<&[u8]> {
    s.windows(k).collect()
}

/// `x` followed by `(n - 1) * |x|` random residues. Tails that happen to
/// reproduce a window of `x` are redrawn.
fn control_variant(x: &Sequence, n: usize, seed: u64) -> Result<Sequence, SeqError> {
    let mut rng = seeded(derive_seed(seed, &format!("control:{}:{n}", x.id())));
    let k = COPY_WINDOW.min(x.len());
    let windows = kmers(x.symbols(), k);
    let mut tail = random_sequence_with(&mut rng, (n - 1) * x.len(), x.alphabet(), "tail")?;
    for _ in 0..crate::seqcore::MAX_REJECTIONS {
        if !tail.symbols().windows(k).any(|w| windows.contains(w)) {
            break;
        }
        tail = random_sequence_with(&mut rng, (n - 1) * x.len(), x.alphabet(), "tail")?;
    }
    x.concat(&tail, format!("{}+ctl{n}", x.id()))
}

/// Builds every group's variant of every base sequence. Multiplicity and
/// control variants of the same `n` have equal length.
pub fn build_groups(corpus: &[Sequence], groups: &[GroupSpec], seed: u64) -> Result<Vec<GroupSequences>, EmbedError> {
    if corpus.is_empty() || groups.is_empty() {
        return Err(EmbedError::Config("corpus and group list must be non-empty".into()));
    }
    let mut ids = HashSet::new();
    for x in corpus {
        if x.len() >= MAX_BASE_LEN {
            return Err(EmbedError::Config(format!(
                "sequence {} has length {}; regression inputs must be shorter than {MAX_BASE_LEN}",
                x.id(),
                x.len()
            )));
        }
        if !ids.insert(x.id()) {
            return Err(EmbedError::Config(format!("duplicate sequence id {}", x.id())));
        }
    }
    for g in groups {
        if let GroupSpec::Multiplicity(n) | GroupSpec::Control(n) = g {
            if *n < 2 {
                return Err(EmbedError::Config(format!("group {g} needs n of at least 2")));
            }
        }
    }
    corpus
        .iter()
        .map(|x| {
            let variants = groups
                .iter()
                .map(|&g| {
                    let v = match g {
                        GroupSpec::Baseline | GroupSpec::OneHot => x.clone(),
                        GroupSpec::Multiplicity(n) => multiply(x, n)?,
                        GroupSpec::Control(n) => control_variant(x, n, seed)?,
                    };
                    Ok((g, v))
                })
                .collect::<Result<_, SeqError>>()?;
            Ok(GroupSequences { base: x.clone(), variants })
        })
        .collect()
}

/// Inputs and soft targets for one group. Row `r` of every group's dataset
/// refers to the same `(sequence id, position)` key.
#[derive(Debug, Clone)]
pub struct GroupDataset {
    pub group: GroupSpec,
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub keys: Vec<(String, usize)>,
}

impl GroupDataset {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Mean entropy of the target rows, in nats: the floor on any
    /// regressor's cross-entropy.
    pub fn mean_target_entropy(&self) -> f64 {
        mean_entropy(&self.targets, None)
    }
}

pub(crate) fn mean_entropy(targets: &Array2<f64>, rows: Option<&[usize]>) -> f64 {
    let h = |r: usize| -> f64 {
        targets.row(r).iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
    };
    match rows {
        Some(idx) => idx.iter().map(|&r| h(r)).sum::<f64>() / idx.len().max(1) as f64,
        None => (0..targets.nrows()).map(h).sum::<f64>() / targets.nrows().max(1) as f64,
    }
}

struct PerSequence {
    target: Vec<f64>,
    inputs: Vec<Vec<f64>>,
}

/// Scores every variant and assembles one dataset per group. Inputs are
/// the embeddings at the first copy of the base sequence; targets are the
/// base sequence's own masked profile (`mode` selects how it is computed).
pub fn extract_training_set(
    scorer: &dyn Scorer,
    groups: &[GroupSequences],
    mode: ProfileMode,
) -> Result<Vec<GroupDataset>, EmbedError> {
    let Some(first) = groups.first() else {
        return Err(EmbedError::Config("no sequences to extract".into()));
    };
    let specs: Vec<GroupSpec> = first.variants.iter().map(|v| v.0).collect();
    if specs.iter().any(|g| g.uses_embeddings()) {
        scorer.capabilities().check_wants(Wants::EMBEDDINGS)?;
    }
    let alpha = first.base.alphabet().len();
    let per_seq = par_map(groups, |gs| {
        let len = gs.base.len();
        let profile = mode.profile(scorer, &gs.base)?;
        let mut target = Vec::with_capacity(len * alpha);
        for pos in 0..len {
            target.extend_from_slice(profile.at(pos).ok_or(ScoreError::Coverage(pos))?);
        }
        let inputs = gs
            .variants
            .iter()
            .map(|(g, v)| {
                if !g.uses_embeddings() {
                    let mut one_hot = vec![0.0; len * alpha];
                    for (pos, &s) in gs.base.symbols().iter().enumerate() {
                        one_hot[pos * alpha + s as usize] = 1.0;
                    }
                    return Ok(one_hot);
                }
                let resp = scorer.score(&ScorerQuery::unmasked(v, Wants::EMBEDDINGS))?;
                let emb = resp.embeddings()?;
                if emb.len() != v.len() {
                    return Err(ScoreError::Shape(format!(
                        "{} embedding rows for a sequence of length {}",
                        emb.len(),
                        v.len()
                    )));
                }
                Ok(emb.as_slice()[..len * emb.width()].to_vec())
            })
            .collect::<Result<Vec<_>, ScoreError>>()?;
        Ok(PerSequence { target, inputs })
    })?;

    let keys: Vec<(String, usize)> =
        groups.iter().flat_map(|gs| (0..gs.base.len()).map(move |p| (gs.base.id().to_string(), p))).collect();
    let n = keys.len();
    let targets = Array2::from_shape_vec(
        (n, alpha),
        per_seq.iter().flat_map(|s| s.target.iter().copied()).collect(),
    )
    .expect("target rows have alphabet width");
    specs
        .iter()
        .enumerate()
        .map(|(gi, &group)| {
            let flat: Vec<f64> = per_seq.iter().flat_map(|s| s.inputs[gi].iter().copied()).collect();
            let width = flat.len() / n.max(1);
            let inputs = Array2::from_shape_vec((n, width), flat)
                .map_err(|_| ScoreError::Shape(format!("group {group} inputs do not share one width")))?;
            Ok(GroupDataset { group, inputs, targets: targets.clone(), keys: keys.clone() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{RetrievalOracle, ToyAttention, ToyAttentionConfig, ToyModel};
    use crate::probes::random_corpus;
    use crate::seqcore::{find_occurrences, Alphabet};

    fn corpus(n: usize) -> Vec<Sequence> {
        random_corpus(n, 20, 40, &Alphabet::protein(), 9).unwrap()
    }

    fn toy() -> ToyModel {
        let cfg = ToyAttentionConfig { width: 8, heads: 2, ff_width: 16, depth: 1, seed: 3, ..ToyAttentionConfig::default() };
        ToyModel::Attention(ToyAttention::new(cfg).unwrap())
    }

    #[test]
    fn standard_run_has_ten_labelled_groups() {
        let g = GroupSpec::standard();
        assert_eq!(g.len(), 10);
        for s in &g {
            assert_eq!(GroupSpec::parse(&s.label()), Some(*s));
        }
        assert_eq!(GroupSpec::parse("control-1"), None);
    }

    #[test]
    fn variant_lengths_match() {
        let x = random_corpus(1, 150, 150, &Alphabet::protein(), 1).unwrap();
        let g = build_groups(&x, &GroupSpec::standard(), 0).unwrap();
        let lens: Vec<usize> = g[0].variants.iter().map(|v| v.1.len()).collect();
        assert_eq!(lens, vec![150, 300, 450, 600, 750, 300, 450, 600, 750, 150]);
        for (spec, v) in &g[0].variants {
            assert_eq!(&v.symbols()[..150], x[0].symbols(), "{spec}");
        }
    }

    #[test]
    fn control_tails_do_not_copy_the_unit() {
        let xs = corpus(10);
        let g = build_groups(&xs, &[GroupSpec::Control(2)], 4).unwrap();
        for gs in &g {
            let v = &gs.variants[0].1;
            let tail = &v.symbols()[gs.base.len()..];
            for w in gs.base.symbols().windows(COPY_WINDOW) {
                assert!(find_occurrences(tail, w).is_empty());
            }
        }
        let again = build_groups(&xs, &[GroupSpec::Control(2)], 4).unwrap();
        assert_eq!(g[3].variants[0].1, again[3].variants[0].1);
    }

    #[test]
    fn long_or_duplicate_inputs_rejected() {
        let long = random_corpus(1, 200, 200, &Alphabet::protein(), 1).unwrap();
        assert!(build_groups(&long, &GroupSpec::standard(), 0).is_err());
        let xs = corpus(1);
        let dup = vec![xs[0].clone(), xs[0].clone()];
        assert!(build_groups(&dup, &GroupSpec::standard(), 0).is_err());
        assert!(build_groups(&xs, &[GroupSpec::Multiplicity(1)], 0).is_err());
    }

    #[test]
    fn datasets_are_aligned_and_share_targets() {
        let xs = corpus(3);
        let g = build_groups(&xs, &GroupSpec::standard(), 0).unwrap();
        let sets = extract_training_set(&toy(), &g, ProfileMode::OneAtATime).unwrap();
        assert_eq!(sets.len(), 10);
        let n: usize = xs.iter().map(Sequence::len).sum();
        for s in &sets {
            assert_eq!(s.len(), n);
            assert_eq!(s.keys, sets[0].keys);
            assert_eq!(s.targets, sets[0].targets);
            let w = if s.group == GroupSpec::OneHot { 20 } else { 8 };
            assert_eq!(s.inputs.ncols(), w);
        }
        let one_hot = sets.last().unwrap();
        assert!(one_hot.inputs.rows().into_iter().all(|r| r.sum() == 1.0));
        for r in sets[0].targets.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-9);
        }
        // Baseline and multiplicity embeddings differ once context is repeated.
        assert_ne!(sets[0].inputs, sets[1].inputs);
    }

    #[test]
    fn scorer_without_embeddings_is_a_capability_error() {
        let xs = corpus(2);
        let g = build_groups(&xs, &GroupSpec::standard(), 0).unwrap();
        let err = extract_training_set(&RetrievalOracle::default(), &g, ProfileMode::OneAtATime).unwrap_err();
        assert!(err.is_capability());
        let only_one_hot = build_groups(&xs, &[GroupSpec::OneHot], 0).unwrap();
        assert!(extract_training_set(&RetrievalOracle::default(), &only_one_hot, ProfileMode::Ofs).is_ok());
    }
}
