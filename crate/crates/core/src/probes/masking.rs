//! Probes that hide or edit the partner of a masked position in a doubled
//! sequence: the entropy quartet, the substitution (flip) matrix and the
//! two-candidate insertion preference.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_positive, interior_positions, random_corpus, sample_seed, Plot, ProbeError, ProbeReport,
    RunningMean, Row,
};
use crate::scoring::{entropy, ofs_profile, par_map, pseudo_perplexity, CountingScorer, ScoreError, Scorer, ScorerQuery, Wants};
use crate::seqcore::rng::{derive_seed, task_rng};
use crate::seqcore::{multiply, Alphabet, SeqError, Sequence};

/// Keeps sequences whose single-pass pseudo-perplexity exceeds `min`.
pub(crate) fn filter_by_pppl(scorer: &dyn Scorer, corpus: &[Sequence], min: Option<f64>) -> Result<Vec<Sequence>, ScoreError> {
    let Some(min) = min else {
        return Ok(corpus.to_vec());
    };
    let keep = par_map(corpus, |x| {
        let p = ofs_profile(scorer, x)?;
        Ok(pseudo_perplexity(&p, x, None)?.value > min)
    })?;
    Ok(corpus.iter().zip(keep).filter(|(_, k)| *k).map(|(x, _)| x.clone()).collect())
}

fn row_at(scorer: &dyn Scorer, queries: &[ScorerQuery<'_>], at: usize) -> Result<Vec<Vec<f64>>, ScoreError> {
    let responses = scorer.score_batch(queries).map_err(|e| e.at_position(at))?;
    if responses.len() != queries.len() {
        return Err(ScoreError::Shape(format!("{} responses for {} queries", responses.len(), queries.len())));
    }
    responses
        .iter()
        .map(|r| r.distributions()?.at(at).map(<[f64]>::to_vec).ok_or(ScoreError::Coverage(at)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EquivalentMaskConfig {
    pub positions_per_seq: usize,
    /// Drop sequences whose single-pass pseudo-perplexity is not above this.
    pub min_pppl: Option<f64>,
    pub seed: u64,
}

impl Default for EquivalentMaskConfig {
    fn default() -> Self {
        Self { positions_per_seq: 8, min_pppl: None, seed: 0 }
    }
}

/// Entropy at a masked position of copy one under four conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyQuartet {
    pub single: f64,
    pub doubled: f64,
    /// Doubled, with the partner position in copy two also masked.
    pub equivalent_masked: f64,
    /// Doubled, with some other position of copy two masked.
    pub nonequivalent_masked: f64,
}

impl EntropyQuartet {
    pub fn as_array(&self) -> [f64; 4] {
        [self.single, self.doubled, self.equivalent_masked, self.nonequivalent_masked]
    }

    pub fn from_report(report: &ProbeReport) -> Vec<EntropyQuartet> {
        report
            .rows
            .iter()
            .filter(|r| r.flag.is_none())
            .filter_map(|r| {
                Some(EntropyQuartet {
                    single: r.get("h_single")?,
                    doubled: r.get("h_doubled")?,
                    equivalent_masked: r.get("h_equivalent_masked")?,
                    nonequivalent_masked: r.get("h_nonequivalent_masked")?,
                })
            })
            .collect()
    }
}

/// For sampled interior positions `i` of each sequence `x` (length `L`):
/// entropy at `i` in `x` alone, in `x‖x`, in `x‖x` with `i+L` also masked,
/// and in `x‖x` with a uniformly drawn other position of copy two masked.
pub fn run_equivalent_mask(scorer: &dyn Scorer, corpus: &[Sequence], cfg: &EquivalentMaskConfig) -> Result<ProbeReport, ProbeError> {
    check_positive("positions_per_seq", cfg.positions_per_seq)?;
    let counted = CountingScorer::new(scorer);
    let kept = filter_by_pppl(&counted, corpus, cfg.min_pppl)?;
    let stream = derive_seed(cfg.seed, "nonequivalent");
    let mut items = Vec::new();
    for (k, x) in kept.iter().enumerate() {
        if x.len() < 3 {
            continue;
        }
        for i in interior_positions(x.len(), cfg.positions_per_seq) {
            items.push((k, i));
        }
    }
    let ln_a = |x: &Sequence| (x.alphabet().len() as f64).ln();
    let rows = par_map(&items, |&(k, i)| {
        let x = &kept[k];
        let l = x.len();
        let d = multiply(x, 2)?;
        let r = task_rng(stream, ((k as u64) << 32) | i as u64).random_range(0..l - 1);
        let j = l + if r < i { r } else { r + 1 };
        let queries = [
            ScorerQuery::single(x, i)?,
            ScorerQuery::single(&d, i)?,
            ScorerQuery::new(&d, vec![i, i + l], Wants::DISTRIBUTIONS)?,
            ScorerQuery::new(&d, vec![i, j], Wants::DISTRIBUTIONS)?,
        ];
        let h: Vec<f64> = row_at(&counted, &queries, i)?.iter().map(|p| entropy(p)).collect();
        let mut row = Row::new()
            .key("id", x.id())
            .key("position", i)
            .metric("h_single", h[0])
            .metric("h_doubled", h[1])
            .metric("h_equivalent_masked", h[2])
            .metric("h_nonequivalent_masked", h[3])
            .metric("nonequivalent_position", j as f64);
        if h.iter().any(|&v| !(-1e-9..=ln_a(x) + 1e-9).contains(&v)) {
            row = row.flagged("entropy outside [0, ln|A|]");
        }
        Ok(row)
    })?;
    let mut report = ProbeReport::new("equivalent_mask", 1, scorer.name(), cfg, cfg.seed);
    report.provenance.derived_seeds.insert("nonequivalent".into(), stream);
    report.notes.push(format!("{} of {} sequences kept by the pseudo-perplexity filter", kept.len(), corpus.len()));
    report.rows = rows;
    report.plot = Some(Plot::Metrics {
        metrics: ["h_single", "h_doubled", "h_equivalent_masked", "h_nonequivalent_masked"].map(String::from).to_vec(),
    });
    Ok(report.finish(counted.queries()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlipConfig {
    pub positions_per_seq: usize,
    pub min_pppl: Option<f64>,
    pub seed: u64,
}

impl Default for FlipConfig {
    fn default() -> Self {
        Self { positions_per_seq: 8, min_pppl: None, seed: 0 }
    }
}

/// Row `a`: mean predicted distribution at a masked position of copy one
/// when its partner in copy two holds symbol `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipMatrix {
    pub symbols: Vec<char>,
    pub rows: Vec<Vec<f64>>,
    pub samples: usize,
    /// False when the sweep stopped early; rows then average fewer samples.
    pub valid: bool,
}

impl FlipMatrix {
    pub fn from_report(report: &ProbeReport) -> Option<FlipMatrix> {
        let symbols: Vec<char> = report.rows.iter().filter_map(|r| r.key_value("substituted")?.chars().next()).collect();
        let rows = report
            .rows
            .iter()
            .map(|r| symbols.iter().map(|c| r.get(&format!("p_{c}"))).collect::<Option<Vec<f64>>>())
            .collect::<Option<Vec<_>>>()?;
        Some(FlipMatrix {
            samples: report.rows.first()?.get("samples")? as usize,
            valid: report.rows.iter().all(|r| r.flag.is_none()),
            symbols,
            rows,
        })
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.len()).map(|a| self.rows[a][a]).collect()
    }
}

/// Substitutes every symbol at the partner of each sampled position and
/// averages the predicted rows per substituted symbol.
pub fn run_flip_matrix(scorer: &dyn Scorer, corpus: &[Sequence], cfg: &FlipConfig) -> Result<ProbeReport, ProbeError> {
    check_positive("positions_per_seq", cfg.positions_per_seq)?;
    let Some(first) = corpus.first() else {
        return Err(ProbeError::Config("corpus is empty".into()));
    };
    let alphabet = first.alphabet().clone();
    if corpus.iter().any(|x| x.alphabet() != &alphabet) {
        return Err(SeqError::AlphabetMismatch.into());
    }
    let width = alphabet.len();
    let counted = CountingScorer::new(scorer);
    let kept = filter_by_pppl(&counted, corpus, cfg.min_pppl)?;
    let items: Vec<(usize, usize)> = kept
        .iter()
        .enumerate()
        .flat_map(|(k, x)| interior_positions(x.len(), cfg.positions_per_seq).into_iter().map(move |i| (k, i)))
        .collect();
    // failures are kept per item so the sweep can report how far it got
    let results = par_map(&items, |&(k, i)| {
        let run = || -> Result<Vec<Vec<f64>>, ScoreError> {
            let x = &kept[k];
            let d = multiply(x, 2)?;
            let variants = (0..width as u8)
                .map(|a| d.with_symbol(i + x.len(), a))
                .collect::<Result<Vec<_>, _>>()?;
            let queries = variants.iter().map(|v| ScorerQuery::single(v, i)).collect::<Result<Vec<_>, _>>()?;
            row_at(&counted, &queries, i)
        };
        Ok(run())
    })?;
    let mut means: Vec<RunningMean> = (0..width).map(|_| RunningMean::new(width)).collect();
    let mut failure = None;
    for r in results {
        match r {
            Ok(rows) => {
                for (m, row) in means.iter_mut().zip(&rows) {
                    m.push(row);
                }
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    let mut report = ProbeReport::new("flip_matrix", 1, scorer.name(), cfg, cfg.seed);
    report.notes.push(
        "every symbol is substituted at the partner position (full sweep), rather than one random substitution per site".into(),
    );
    let symbols = alphabet.symbols();
    for (a, m) in means.iter().enumerate() {
        let mut row = Row::new().key("substituted", symbols[a]).key("index", a).metric("samples", m.count() as f64);
        for (b, &p) in m.mean().iter().enumerate() {
            row = row.metric(&format!("p_{}", symbols[b]), p);
        }
        let sum: f64 = m.mean().iter().sum();
        if let Some(e) = &failure {
            row = row.flagged(format!("partial sweep: {e}"));
        } else if m.count() == 0 {
            row = row.flagged("no samples");
        } else if (sum - 1.0).abs() > 1e-6 {
            row = row.flagged(format!("row sums to {sum}"));
        }
        report.rows.push(row);
    }
    report.plot = Some(Plot::Matrix {
        row_key: "substituted".into(),
        metrics: symbols.iter().map(|c| format!("p_{c}")).collect(),
    });
    Ok(report.finish(counted.queries()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContralateralConfig {
    pub length: usize,
    pub n_samples: usize,
    pub alphabet: String,
    /// Probability gaps below this count as ties.
    pub tie_tolerance: f64,
    pub seed: u64,
}

impl Default for ContralateralConfig {
    fn default() -> Self {
        Self { length: 30, n_samples: 100, alphabet: "protein".into(), tie_tolerance: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferencePoint {
    pub position: usize,
    pub right: usize,
    pub left: usize,
    pub ties: usize,
    /// `right / (right + left)`, absent when every sample tied.
    pub fraction_right: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceCurve {
    pub points: Vec<PreferencePoint>,
}

impl PreferenceCurve {
    pub fn from_report(report: &ProbeReport) -> PreferenceCurve {
        let points = report
            .rows
            .iter()
            .filter_map(|r| {
                Some(PreferencePoint {
                    position: r.key_value("position")?.parse().ok()?,
                    right: r.get("right")? as usize,
                    left: r.get("left")? as usize,
                    ties: r.get("ties")? as usize,
                    fraction_right: r.get("fraction_right"),
                })
            })
            .collect();
        PreferenceCurve { points }
    }
}

/// Two distinct symbols, both different from `avoid`.
fn two_novel(rng: &mut impl Rng, k: u8, avoid: u8) -> (u8, u8) {
    let a = loop {
        let s = rng.random_range(0..k);
        if s != avoid {
            break s;
        }
    };
    let b = loop {
        let s = rng.random_range(0..k);
        if s != avoid && s != a {
            break s;
        }
    };
    (a, b)
}

/// Copy two replaces position `p` of copy one by two novel symbols `a`, `b`
/// (in that order). With `p` masked in copy one, records whether the
/// right-hand candidate `b` outscores the left-hand `a`.
pub fn run_contralateral(scorer: &dyn Scorer, cfg: &ContralateralConfig) -> Result<ProbeReport, ProbeError> {
    if cfg.length < 4 {
        return Err(ProbeError::Config("length must be at least 4".into()));
    }
    check_positive("n_samples", cfg.n_samples)?;
    let alphabet = Alphabet::by_name(&cfg.alphabet)?;
    if alphabet.len() < 3 {
        return Err(SeqError::AlphabetTooSmall { needed: 3, size: alphabet.len() }.into());
    }
    let k = alphabet.len() as u8;
    let l = cfg.length;
    let corpus = random_corpus(cfg.n_samples, l, l, &alphabet, cfg.seed)?;
    let items: Vec<(usize, usize)> = (0..cfg.n_samples).flat_map(|s| (0..l).map(move |p| (s, p))).collect();
    let counted = CountingScorer::new(scorer);
    let calls = par_map(&items, |&(s, p)| {
        let x = &corpus[s];
        let mut rng = task_rng(derive_seed(sample_seed(cfg.seed, s), "insertion"), p as u64);
        let (a, b) = two_novel(&mut rng, k, x.get(p));
        let mut sym = x.symbols().to_vec();
        sym.extend_from_slice(&x.symbols()[..p]);
        sym.extend_from_slice(&[a, b]);
        sym.extend_from_slice(&x.symbols()[p + 1..]);
        let pair = Sequence::new(format!("{}:insert{p}", x.id()), sym, alphabet.clone())?;
        let row = &row_at(&counted, &[ScorerQuery::single(&pair, p)?], p)?[0];
        let gap = row[b as usize] - row[a as usize];
        Ok(if gap > cfg.tie_tolerance {
            1i8
        } else if gap < -cfg.tie_tolerance {
            -1
        } else {
            0
        })
    })?;
    let mut report = ProbeReport::new("contralateral", 1, scorer.name(), cfg, cfg.seed);
    for p in 0..l {
        let calls_p = calls.iter().zip(&items).filter(|(_, it)| it.1 == p).map(|(c, _)| *c);
        let (mut right, mut left, mut ties) = (0usize, 0usize, 0usize);
        for c in calls_p {
            match c {
                1 => right += 1,
                -1 => left += 1,
                _ => ties += 1,
            }
        }
        let mut row = Row::new()
            .key("position", p)
            .metric("right", right as f64)
            .metric("left", left as f64)
            .metric("ties", ties as f64);
        if right + left > 0 {
            row = row.metric("fraction_right", right as f64 / (right + left) as f64);
        }
        report.rows.push(row);
    }
    report.plot = Some(Plot::Lines { x_key: "position".into(), series_key: None, metric: "fraction_right".into() });
    Ok(report.finish(counted.queries()))
}
