//! Probes on constructed contexts: divergent copies, needles in random
//! haystacks, alternating-match partners and transformed nucleotide copies.

use serde::{Deserialize, Serialize};

use super::masking::filter_by_pppl;
use super::{
    check_positive, random_corpus, sample_seed, unless_overflow, Plot, ProbeError, ProbeReport,
    ProfileMode, RunningMean, Row, EXCEEDS_CONTEXT,
};
use crate::scoring::{ofs_profile, par_map, pseudo_perplexity, CountingScorer, ScoreError, Scorer};
use crate::seqcore::rng::derive_seed;
use crate::seqcore::{
    complement, make_needle_haystack, make_skip_pair, mutate_copy, random_sequence, reverse,
    reverse_complement, Alphabet, EditTrace, MutationSpec, OpWeights, SeqError, Sequence, SkipPhase, Span,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImperfectRepeatConfig {
    /// Fraction of positions edited in the copy; 0 means an exact copy.
    pub proportions: Vec<f64>,
    pub op_weights: OpWeights,
    pub min_pppl: Option<f64>,
    pub seed: u64,
}

impl Default for ImperfectRepeatConfig {
    fn default() -> Self {
        Self {
            proportions: (1..=5).map(|k| k as f64 / 10.0).collect(),
            op_weights: OpWeights::default(),
            min_pppl: None,
            seed: 0,
        }
    }
}

fn identity_trace(len: usize) -> EditTrace {
    EditTrace {
        edits: Vec::new(),
        source_of: (0..len).map(Some).collect(),
        target_of: (0..len).map(Some).collect(),
    }
}

/// For each sequence `x` and proportion, a mutated copy `y` is scored by a
/// single pass over `x‖y` (local pseudo-perplexity of the `y` span) and by
/// itself. `p_aligned_source` is the mean probability given to the source
/// symbol that each surviving position of `y` descends from.
pub fn run_imperfect_repeat(scorer: &dyn Scorer, corpus: &[Sequence], cfg: &ImperfectRepeatConfig) -> Result<ProbeReport, ProbeError> {
    if cfg.proportions.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(ProbeError::Config("proportions must lie in [0, 1]".into()));
    }
    let counted = CountingScorer::new(scorer);
    let kept = filter_by_pppl(&counted, corpus, cfg.min_pppl)?;
    let items: Vec<(usize, f64)> = (0..kept.len())
        .flat_map(|k| cfg.proportions.iter().map(move |&p| (k, p)))
        .collect();
    let rows = par_map(&items, |&(k, prop)| {
        let x = &kept[k];
        let row = Row::new().key("id", x.id()).key("proportion", prop);
        let (y, trace) = if prop == 0.0 {
            (x.clone().with_id(format!("{}:copy", x.id())), identity_trace(x.len()))
        } else {
            let spec = MutationSpec::new(prop, cfg.op_weights, derive_seed(sample_seed(cfg.seed, k), &format!("mutate-{prop}")));
            match mutate_copy(x, &spec) {
                Ok(v) => v,
                Err(SeqError::NoOpMutation) => return Ok(row.flagged("proportion rounds to zero edits")),
                Err(e) => return Err(e.into()),
            }
        };
        let pair = x.concat(&y, format!("{}+{}", x.id(), y.id()))?;
        let span = Span::new(x.len(), pair.len());
        let Some(profile) = unless_overflow(ofs_profile(&counted, &pair))? else {
            return Ok(row.flagged(EXCEEDS_CONTEXT));
        };
        let paired = pseudo_perplexity(&profile, &pair, Some(span))?.value;
        let alone = ofs_profile(&counted, &y)?;
        let isolated = pseudo_perplexity(&alone, &y, None)?.value;
        let mut aligned = Vec::new();
        for (t, src) in trace.source_of.iter().enumerate() {
            if let Some(s) = src {
                let r = profile.at(x.len() + t).ok_or(ScoreError::Coverage(x.len() + t))?;
                aligned.push(r[x.get(*s) as usize]);
            }
        }
        let p_aligned = if aligned.is_empty() { f64::NAN } else { aligned.iter().sum::<f64>() / aligned.len() as f64 };
        Ok(row
            .metric("edits", trace.edits.len() as f64)
            .metric("copy_len", y.len() as f64)
            .metric("pppl_paired", paired)
            .metric("pppl_isolated", isolated)
            .metric("p_aligned_source", p_aligned))
    })?;
    let mut report = ProbeReport::new("imperfect_repeat", 1, scorer.name(), cfg, cfg.seed);
    report.rows = rows;
    report.plot = Some(Plot::Bands { group_key: "proportion".into(), metric: "pppl_paired".into() });
    Ok(report.finish(counted.queries()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeedleConfig {
    pub needle_sizes: Vec<usize>,
    pub haystack_sizes: Vec<usize>,
    pub n_samples: usize,
    pub alphabet: String,
    pub seed: u64,
}

impl Default for NeedleConfig {
    fn default() -> Self {
        Self {
            needle_sizes: vec![10, 20, 50],
            haystack_sizes: vec![0, 100, 250, 500, 1000],
            n_samples: 10,
            alphabet: "protein".into(),
            seed: 0,
        }
    }
}

/// Local single-pass pseudo-perplexity of the leading needle in
/// `needle ‖ haystack ‖ needle`, per grid cell and sample.
pub fn run_needle_haystack(scorer: &dyn Scorer, cfg: &NeedleConfig) -> Result<ProbeReport, ProbeError> {
    check_positive("n_samples", cfg.n_samples)?;
    if cfg.needle_sizes.contains(&0) {
        return Err(ProbeError::Config("needle sizes must be positive".into()));
    }
    let alphabet = Alphabet::by_name(&cfg.alphabet)?;
    let cap = scorer.capabilities().max_len;
    let counted = CountingScorer::new(scorer);
    let mut items = Vec::new();
    for &n in &cfg.needle_sizes {
        for &h in &cfg.haystack_sizes {
            for k in 0..cfg.n_samples {
                items.push((n, h, k));
            }
        }
    }
    let rows = par_map(&items, |&(n, h, k)| {
        let row = Row::new().key("needle", n).key("haystack", h).key("sample", k);
        if cap.is_some_and(|c| 2 * n + h > c) {
            return Ok(row.flagged(EXCEEDS_CONTEXT));
        }
        let built = make_needle_haystack(n, h, &alphabet, sample_seed(derive_seed(cfg.seed, &format!("needle{n}-hay{h}")), k))?;
        let Some(profile) = unless_overflow(ofs_profile(&counted, &built.sequence))? else {
            return Ok(row.flagged(EXCEEDS_CONTEXT));
        };
        Ok(row
            .metric("total_len", built.sequence.len() as f64)
            .metric("pppl_needle", pseudo_perplexity(&profile, &built.sequence, Some(built.needle))?.value)
            .metric("pppl_partner", pseudo_perplexity(&profile, &built.sequence, Some(built.partner))?.value))
    })?;
    let mut report = ProbeReport::new("needle_haystack", 1, scorer.name(), cfg, cfg.seed);
    report.rows = rows;
    report.plot = Some(Plot::Heatmap { row_key: "needle".into(), col_key: "haystack".into(), metric: "pppl_needle".into() });
    Ok(report.finish(counted.queries()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipConfig {
    pub length: usize,
    pub n_samples: usize,
    pub phase: SkipPhase,
    pub alphabet: String,
    pub seed: u64,
}

impl Default for SkipConfig {
    fn default() -> Self {
        Self { length: 40, n_samples: 20, phase: SkipPhase::Even, alphabet: "protein".into(), seed: 0 }
    }
}

/// Per-position traces over `x ‖ y` where `y` matches `x` only at every
/// other position. `p_equivalent` is the probability of the symbol at the
/// aligned position of the other half, `p_true` that of the symbol present.
/// The control trace replaces `y` by an unrelated random sequence.
pub fn run_skip(scorer: &dyn Scorer, cfg: &SkipConfig) -> Result<ProbeReport, ProbeError> {
    if cfg.length < 8 || cfg.length % 2 != 0 {
        return Err(ProbeError::Config("length must be even and at least 8".into()));
    }
    check_positive("n_samples", cfg.n_samples)?;
    let alphabet = Alphabet::by_name(&cfg.alphabet)?;
    let l = cfg.length;
    let corpus = random_corpus(cfg.n_samples, l, l, &alphabet, cfg.seed)?;
    let counted = CountingScorer::new(scorer);
    let traces = par_map(&(0..cfg.n_samples).collect::<Vec<_>>(), |&k| {
        let x = &corpus[k];
        let seed = sample_seed(cfg.seed, k);
        let y = make_skip_pair(x, cfg.phase, seed)?;
        let z = random_sequence(l, &alphabet, derive_seed(seed, "control"))?;
        let mut out = Vec::new();
        for partner in [y, z] {
            let s = x.concat(&partner, format!("{}+{}", x.id(), partner.id()))?;
            let profile = ofs_profile(&counted, &s)?;
            let trace: Vec<[f64; 2]> = (0..2 * l)
                .map(|t| {
                    let other = if t < l { t + l } else { t - l };
                    let row = profile.at(t).ok_or(ScoreError::Coverage(t))?;
                    Ok([row[s.get(other) as usize], row[s.get(t) as usize]])
                })
                .collect::<Result<_, ScoreError>>()?;
            out.push(trace);
        }
        Ok(out)
    })?;
    let mut report = ProbeReport::new("skip", 1, scorer.name(), cfg, cfg.seed);
    for (which, name) in ["skip", "control"].iter().enumerate() {
        for t in 0..2 * l {
            let mut m = RunningMean::new(2);
            for sample in &traces {
                m.push(&sample[which][t]);
            }
            report.rows.push(
                Row::new()
                    .key("trace", name)
                    .key("position", t)
                    .metric("matched", if which == 0 && cfg.phase.keeps(t % l) { 1.0 } else { 0.0 })
                    .metric("p_equivalent", m.mean()[0])
                    .metric("p_true", m.mean()[1]),
            );
        }
    }
    report.plot = Some(Plot::Lines { x_key: "position".into(), series_key: Some("trace".into()), metric: "p_equivalent".into() });
    Ok(report.finish(counted.queries()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextTransform {
    /// The original sequence with no added context.
    None,
    Random,
    Repeat,
    Complement,
    Reversed,
    ReverseComplement,
}

impl ContextTransform {
    pub const ALL: [ContextTransform; 6] = [
        ContextTransform::None,
        ContextTransform::Random,
        ContextTransform::Repeat,
        ContextTransform::Complement,
        ContextTransform::Reversed,
        ContextTransform::ReverseComplement,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ContextTransform::None => "none",
            ContextTransform::Random => "random",
            ContextTransform::Repeat => "repeat",
            ContextTransform::Complement => "complement",
            ContextTransform::Reversed => "reversed",
            ContextTransform::ReverseComplement => "reverse-complement",
        }
    }

    fn context(self, x: &Sequence, seed: u64) -> Result<Option<Sequence>, SeqError> {
        Ok(Some(match self {
            ContextTransform::None => return Ok(None),
            ContextTransform::Random => random_sequence(x.len(), x.alphabet(), derive_seed(seed, "random-context"))?,
            ContextTransform::Repeat => x.clone(),
            ContextTransform::Complement => complement(x)?,
            ContextTransform::Reversed => reverse(x),
            ContextTransform::ReverseComplement => reverse_complement(x)?,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextTransformConfig {
    pub length: usize,
    pub n_samples: usize,
    pub transforms: Vec<ContextTransform>,
    pub alphabet: String,
    pub mode: ProfileMode,
    pub seed: u64,
}

impl Default for ContextTransformConfig {
    fn default() -> Self {
        Self {
            length: 50,
            n_samples: 20,
            transforms: ContextTransform::ALL.to_vec(),
            alphabet: "rna".into(),
            mode: ProfileMode::Ofs,
            seed: 0,
        }
    }
}

/// Pseudo-perplexity of a random nucleotide sequence `x` over its own span
/// in `x ‖ transform(x)`.
pub fn run_context_transform(scorer: &dyn Scorer, cfg: &ContextTransformConfig) -> Result<ProbeReport, ProbeError> {
    check_positive("length", cfg.length)?;
    check_positive("n_samples", cfg.n_samples)?;
    let alphabet = Alphabet::by_name(&cfg.alphabet)?;
    if !alphabet.has_complement() {
        return Err(SeqError::MissingComplement.into());
    }
    let corpus = random_corpus(cfg.n_samples, cfg.length, cfg.length, &alphabet, cfg.seed)?;
    let items: Vec<(usize, ContextTransform)> = (0..cfg.n_samples)
        .flat_map(|k| cfg.transforms.iter().map(move |&t| (k, t)))
        .collect();
    let counted = CountingScorer::new(scorer);
    let rows = par_map(&items, |&(k, t)| {
        let x = &corpus[k];
        let row = Row::new().key("transform", t.label()).key("sample", k);
        let s = match t.context(x, sample_seed(cfg.seed, k))? {
            Some(c) => x.concat(&c, format!("{}+{}", x.id(), t.label()))?,
            None => x.clone(),
        };
        let Some(profile) = unless_overflow(cfg.mode.profile(&counted, &s))? else {
            return Ok(row.flagged(EXCEEDS_CONTEXT));
        };
        Ok(row.metric("pppl", pseudo_perplexity(&profile, &s, Some(x.full_span()))?.value))
    })?;
    let mut report = ProbeReport::new("context_transform", 1, scorer.name(), cfg, cfg.seed);
    report.rows = rows;
    report.plot = Some(Plot::Bands { group_key: "transform".into(), metric: "pppl".into() });
    Ok(report.finish(counted.queries()))
}
