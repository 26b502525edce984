//! WebAssembly entry points for the static demo page in `www/`. Each export
//! takes plain numbers and strings and returns a JSON document; the
//! `*_json` functions behind them are ordinary Rust and testable natively.

use iclaudit::models::{OracleCall, OracleConfig, RetrievalOracle};
use iclaudit::probes::{run_needle_haystack, run_skip, NeedleConfig, ProbeError, SkipConfig};
use iclaudit::scoring::{entropy, one_at_a_time_profile, pseudo_perplexity, ProfileOptions, ScoreError};
use iclaudit::seqcore::{multiply, Alphabet, SeqError, Sequence};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Longest sequence the profile explorer accepts after repetition. The
/// oracle is quadratic in length and the page should stay responsive.
pub const MAX_DEMO_LEN: usize = 2000;

#[derive(Debug)]
pub struct DemoError(String);

impl std::fmt::Display for DemoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<ScoreError> for DemoError {
    fn from(e: ScoreError) -> Self {
        DemoError(e.to_string())
    }
}

impl From<SeqError> for DemoError {
    fn from(e: SeqError) -> Self {
        DemoError(e.to_string())
    }
}

impl From<ProbeError> for DemoError {
    fn from(e: ProbeError) -> Self {
        DemoError(e.to_string())
    }
}

#[derive(Serialize)]
struct PositionView {
    pos: usize,
    symbol: char,
    p_true: f64,
    entropy: f64,
    /// Where the oracle copied from, when it did.
    source: Option<usize>,
}

#[derive(Serialize)]
struct ProfileView {
    length: usize,
    pppl: f64,
    positions: Vec<PositionView>,
}

fn parse_sizes(s: &str) -> Result<Vec<usize>, DemoError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| DemoError(format!("not a size: {t:?}"))))
        .collect()
}

/// One-at-a-time profile of `text` repeated `multiplicity` times under a
/// retrieval oracle with the given flank width.
pub fn profile_json(text: &str, alphabet: &str, multiplicity: usize, flank: usize) -> Result<String, DemoError> {
    let a = Alphabet::by_name(alphabet)?;
    let clean: String = text.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_uppercase();
    let unit = Sequence::from_text("input", &clean, a)?;
    let x = multiply(&unit, multiplicity)?;
    if x.len() > MAX_DEMO_LEN {
        return Err(DemoError(format!("{} residues after repetition; the demo stops at {MAX_DEMO_LEN}", x.len())));
    }
    let oracle = RetrievalOracle::new(OracleConfig { flank, min_match: flank, ..OracleConfig::default() })?;
    let profile = one_at_a_time_profile(&oracle, &x, ProfileOptions::default())?;
    let pppl = pseudo_perplexity(&profile, &x, None)?.value;
    let symbols = x.symbols();
    let positions = (0..x.len())
        .map(|i| {
            let row = profile.at(i).ok_or(ScoreError::Coverage(i))?;
            let mut hidden = vec![false; x.len()];
            hidden[i] = true;
            let source = match oracle.call(symbols, &hidden, i) {
                OracleCall::Retrieved { source, .. } => Some(source),
                OracleCall::Fallback => None,
            };
            Ok(PositionView {
                pos: i,
                symbol: x.alphabet().symbol(symbols[i]),
                p_true: row[symbols[i] as usize],
                entropy: entropy(row),
                source,
            })
        })
        .collect::<Result<_, ScoreError>>()?;
    let view = ProfileView { length: x.len(), pppl, positions };
    Ok(serde_json::to_string(&view).expect("views serialize"))
}

/// Needle-in-haystack report rows under the default oracle.
pub fn needle_json(needles: &str, haystacks: &str, n_samples: usize, seed: u64) -> Result<String, DemoError> {
    let cfg = NeedleConfig {
        needle_sizes: parse_sizes(needles)?,
        haystack_sizes: parse_sizes(haystacks)?,
        n_samples,
        seed,
        ..NeedleConfig::default()
    };
    let report = run_needle_haystack(&RetrievalOracle::default(), &cfg)?;
    Ok(serde_json::to_string(&report.rows).expect("rows serialize"))
}

/// Skip-pair trace rows under the default oracle.
pub fn skip_json(length: usize, n_samples: usize, seed: u64) -> Result<String, DemoError> {
    let cfg = SkipConfig { length, n_samples, seed, ..SkipConfig::default() };
    let report = run_skip(&RetrievalOracle::default(), &cfg)?;
    Ok(serde_json::to_string(&report.rows).expect("rows serialize"))
}

fn js(r: Result<String, DemoError>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.0))
}

#[wasm_bindgen(js_name = profileExplorer)]
pub fn profile_explorer(text: &str, alphabet: &str, multiplicity: usize, flank: usize) -> Result<String, JsError> {
    js(profile_json(text, alphabet, multiplicity, flank))
}

#[wasm_bindgen(js_name = needleGrid)]
pub fn needle_grid(needles: &str, haystacks: &str, n_samples: usize, seed: u64) -> Result<String, JsError> {
    js(needle_json(needles, haystacks, n_samples, seed))
}

#[wasm_bindgen(js_name = skipTrace)]
pub fn skip_trace(length: usize, n_samples: usize, seed: u64) -> Result<String, JsError> {
    js(skip_json(length, n_samples, seed))
}
