//! Run configuration: a flat TOML file whose keys mirror the command-line
//! flags. Flags override the file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use iclaudit::models::{load_checkpoint, Fixture, OracleConfig, RetrievalOracle, UniformScorer};
use iclaudit::probes::random_corpus;
use iclaudit::remote::{RemoteConfig, RemoteScorer};
use iclaudit::scoring::Scorer;
use iclaudit::seqcore::{parse_fasta, Alphabet, LengthFilter, Sequence};
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const CONFIG_VERSION: u32 = 1;

pub const SCORER_HELP: &str = "oracle | oracle-strict | uniform | toy:<checkpoint> | fixture:<name> | remote";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    pub scorer: String,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub alphabet: String,
    pub corpus: Vec<PathBuf>,
    /// `NxL` or `NxMIN-MAX`: N random sequences of length L or MIN..=MAX.
    pub random: Option<String>,
    pub min_len: Option<usize>,
    pub max_len: Option<usize>,
    pub pppl_min: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub emit_svg: bool,
    pub cache_dir: Option<PathBuf>,
    pub precision: String,
    /// Probe or regression parameters, passed through to the runner.
    pub params: toml::Table,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            scorer: "oracle".into(),
            endpoint: None,
            model: None,
            alphabet: "protein".into(),
            corpus: Vec::new(),
            random: None,
            min_len: None,
            max_len: None,
            pppl_min: None,
            seed: None,
            out: None,
            workers: None,
            emit_svg: false,
            cache_dir: None,
            precision: "f64".into(),
            params: toml::Table::new(),
        }
    }
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: RunConfig = toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    if cfg.config_version != CONFIG_VERSION {
        return Err(UsageError(format!(
            "{} has config_version {}; this build reads version {CONFIG_VERSION}",
            path.display(),
            cfg.config_version
        ))
        .into());
    }
    Ok(cfg)
}

/// Parses `key=value`, reading the value as TOML and falling back to a
/// plain string.
pub fn parse_set(item: &str) -> Result<(String, toml::Value)> {
    let Some((k, v)) = item.split_once('=') else {
        return Err(UsageError(format!("--set expects key=value, got {item:?}")).into());
    };
    let k = k.trim().to_string();
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k, value))
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.precision != "f64" {
            return Err(UsageError(format!(
                "precision {:?} is not supported; all arithmetic is double precision",
                self.precision
            ))
            .into());
        }
        if self.workers == Some(0) {
            return Err(UsageError("workers must be at least 1".into()).into());
        }
        Ok(())
    }

    pub fn alphabet(&self) -> Result<Arc<Alphabet>> {
        Alphabet::by_name(&self.alphabet).map_err(|e| UsageError(e.to_string()).into())
    }

    fn length_filter(&self) -> Option<LengthFilter> {
        match (self.min_len, self.max_len) {
            (None, None) => None,
            (min, max) => Some(LengthFilter { min: min.unwrap_or(1), max: max.unwrap_or(usize::MAX) }),
        }
    }

    /// FASTA records from every `corpus` path, then any random sequences.
    /// `None` when neither source is configured.
    pub fn corpus(&self) -> Result<Option<Vec<Sequence>>> {
        if self.corpus.is_empty() && self.random.is_none() {
            return Ok(None);
        }
        let alphabet = self.alphabet()?;
        let mut out = Vec::new();
        for path in &self.corpus {
            let parsed = parse_fasta(path, &alphabet, self.length_filter())
                .with_context(|| format!("reading {}", path.display()))?;
            for r in &parsed.rejected {
                eprintln!("skipped record: {r:?}");
            }
            out.extend(parsed.sequences);
        }
        if let Some(spec) = &self.random {
            let (n, min, max) = parse_random(spec)?;
            out.extend(random_corpus(n, min, max, &alphabet, self.seed())?);
        }
        if out.is_empty() {
            return Err(UsageError("corpus is empty after filtering".into()).into());
        }
        Ok(Some(out))
    }

    pub fn require_corpus(&self) -> Result<Vec<Sequence>> {
        self.corpus()?
            .ok_or_else(|| UsageError("this command needs --corpus <fasta> or --random NxL".into()).into())
    }

    pub fn scorer(&self) -> Result<Box<dyn Scorer>> {
        let s = self.scorer.as_str();
        Ok(match s {
            "oracle" => Box::new(RetrievalOracle::default()),
            "oracle-strict" => Box::new(RetrievalOracle::new(OracleConfig::default().strict())?),
            "uniform" => Box::new(UniformScorer),
            "remote" => {
                let cfg = RemoteConfig {
                    endpoint: self.endpoint.clone().unwrap_or_default(),
                    model: self.model.clone().unwrap_or_default(),
                    alphabet: self.alphabet.clone(),
                    cache_dir: self.cache_dir.as_ref().map(|d| d.join("responses")),
                    ..RemoteConfig::default()
                }
                .with_env();
                Box::new(RemoteScorer::new(cfg).map_err(|e| UsageError(e.to_string()))?)
            }
            _ if s.starts_with("toy:") => {
                let path = Path::new(&s[4..]);
                let (model, _) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
                Box::new(model)
            }
            _ if s.starts_with("fixture:") => {
                let fixture = Fixture::by_name(&s[8..]).ok_or_else(|| {
                    UsageError(format!("unknown fixture {:?}; known: {}", &s[8..], Fixture::NAMES.join(", ")))
                })?;
                Box::new(fixture.trained(self.cache_dir.as_deref().map(|d| d.join("fixtures")).as_deref())?)
            }
            _ => bail!(UsageError(format!("unknown scorer {s:?}; expected {SCORER_HELP}"))),
        })
    }
}

pub fn parse_random(spec: &str) -> Result<(usize, usize, usize)> {
    let bad = || UsageError(format!("--random expects NxL or NxMIN-MAX, got {spec:?}"));
    let (n, len) = spec.split_once('x').ok_or_else(bad)?;
    let n: usize = n.parse().map_err(|_| bad())?;
    let (min, max) = match len.split_once('-') {
        Some((a, b)) => (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?),
        None => {
            let l = len.parse().map_err(|_| bad())?;
            (l, l)
        }
    };
    if n == 0 || min == 0 || min > max {
        return Err(bad().into());
    }
    Ok((n, min, max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_specs() {
        assert_eq!(parse_random("1000x200").unwrap(), (1000, 200, 200));
        assert_eq!(parse_random("20x50-300").unwrap(), (20, 50, 300));
        for bad in ["x", "10", "0x5", "3x9-2", "ax3"] {
            assert!(parse_random(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn set_values_are_typed() {
        assert_eq!(parse_set("n_samples=5").unwrap().1, toml::Value::Integer(5));
        assert_eq!(parse_set("alphabet=rna").unwrap().1, toml::Value::String("rna".into()));
        assert_eq!(parse_set("sizes=[1, 2]").unwrap().1.as_array().unwrap().len(), 2);
        assert!(parse_set("novalue").is_err());
    }

    #[test]
    fn file_round_trips_and_rejects_unknown_keys() {
        let cfg = RunConfig { seed: Some(4), random: Some("3x10".into()), ..RunConfig::default() };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
        assert!(toml::from_str::<RunConfig>("scorre = \"oracle\"").is_err());
    }

    #[test]
    fn single_precision_is_refused() {
        let cfg = RunConfig { precision: "f32".into(), ..RunConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
