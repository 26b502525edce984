use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::SystemTime;

use anyhow::{Context, Result};
use iclaudit::embedprobe::{build_groups, extract_training_set, train_and_evaluate, GroupSpec, RegressionConfig};
use iclaudit::models::{sample_corpus, save_checkpoint, train_masked_lm, Fixture, TrainError};
use iclaudit::probes::{
    ids_above, run_context_transform, run_contralateral, run_doubling, run_equivalent_mask, run_flip_matrix,
    run_imperfect_repeat, run_multiplicity_sweep, run_needle_haystack, run_score, run_skip, ContextTransformConfig,
    ContralateralConfig, DoublingConfig, EquivalentMaskConfig, FlipConfig, ImperfectRepeatConfig, NeedleConfig,
    ProbeReport, ProfileMode, RunSidecar, ScoreConfig, SkipConfig, SweepConfig,
};
use iclaudit::scoring::Scorer;
use iclaudit::seqcore::write_fasta;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::{CapabilityError, Command, UsageError};

pub enum Outcome {
    Complete,
    /// Finished, but this many rows were flagged.
    Partial(usize),
}

pub fn run(command: Command, cfg: &RunConfig, workers: usize) -> Result<Outcome> {
    let started = SystemTime::now();
    let run = Run { cfg, workers, started };
    match command {
        Command::Score { ofs } => run.score(ofs),
        Command::Probe { name } => run.probe(&name),
        Command::TrainToy { fixture, steps } => run.train_toy(&fixture, steps),
        Command::EmbedRegress => run.embed_regress(),
        Command::Filter { pppl_min, scores } => run.filter(pppl_min, scores.as_deref()),
    }
}

struct Run<'a> {
    cfg: &'a RunConfig,
    workers: usize,
    started: SystemTime,
}

/// Turns capability failures into an error that carries the scorer's
/// declared capabilities.
fn explain<T, E>(scorer: &dyn Scorer, r: std::result::Result<T, E>) -> Result<T>
where
    E: std::error::Error + Send + Sync + 'static,
    anyhow::Error: From<E>,
{
    r.map_err(|e| {
        let err = anyhow::Error::from(e);
        if crate::exit_code(&err) == crate::EXIT_CAPABILITY {
            let caps = serde_json::to_string(&scorer.capabilities()).expect("capabilities serialize");
            CapabilityError(format!("{err:#}\nscorer {} declares {caps}", scorer.name())).into()
        } else {
            err
        }
    })
}

/// Merges `--set` parameters over the runner's defaults. Unknown keys are
/// usage errors; `--seed` wins over a `seed` parameter.
fn params<T: Serialize + DeserializeOwned + Default>(cfg: &RunConfig, extra: &[&str]) -> Result<T> {
    let mut merged = serde_json::to_value(T::default())?;
    let obj = merged.as_object_mut().expect("configs are records");
    for (k, v) in &cfg.params {
        if extra.contains(&k.as_str()) {
            continue;
        }
        if !obj.contains_key(k) {
            let known: Vec<&String> = obj.keys().collect();
            return Err(UsageError(format!("unknown parameter {k:?}; known: {known:?}")).into());
        }
        obj.insert(k.clone(), serde_json::to_value(v)?);
    }
    if obj.contains_key("seed") && (cfg.seed.is_some() || !cfg.params.contains_key("seed")) {
        obj.insert("seed".into(), cfg.seed().into());
    }
    serde_json::from_value(merged).map_err(|e| UsageError(format!("bad parameter: {e}")).into())
}

impl Run<'_> {
    fn sidecar(&self) -> RunSidecar {
        RunSidecar::new(self.started, self.workers)
    }

    /// Writes the resolved config next to the outputs, or echoes it to
    /// stderr when writing to stdout.
    fn echo_config(&self) -> Result<()> {
        let text = toml::to_string(self.cfg)?;
        match &self.cfg.out {
            Some(dir) => {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                std::fs::write(dir.join("config.toml"), text)?;
            }
            None => {
                for line in text.lines() {
                    eprintln!("# {line}");
                }
            }
        }
        Ok(())
    }

    fn write_sidecar(&self, dir: &Path, stem: &str) -> Result<()> {
        let s = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(dir.join(format!("{stem}.run.json")), s + "\n")?;
        Ok(())
    }

    fn emit(&self, report: &ProbeReport, stem: &str) -> Result<Outcome> {
        self.echo_config()?;
        match &self.cfg.out {
            Some(dir) => {
                for p in report.write(dir, stem, self.cfg.emit_svg)? {
                    eprintln!("wrote {}", p.display());
                }
                self.write_sidecar(dir, stem)?;
            }
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(report.to_csv()?.as_bytes())?;
                out.flush()?;
            }
        }
        Ok(if report.is_partial() { Outcome::Partial(report.flagged_rows()) } else { Outcome::Complete })
    }

    fn score(&self, ofs: bool) -> Result<Outcome> {
        let corpus = self.cfg.require_corpus()?;
        let scorer = self.cfg.scorer()?;
        let mode = if ofs { ProfileMode::Ofs } else { ProfileMode::OneAtATime };
        let report = explain(&*scorer, run_score(&*scorer, &corpus, &ScoreConfig { mode, seed: self.cfg.seed() }))?;
        self.emit(&report, "score")
    }

    fn probe(&self, name: &str) -> Result<Outcome> {
        let scorer = self.cfg.scorer()?;
        let s = &*scorer;
        let cfg = self.cfg;
        let report = match name {
            "doubling" => explain(s, run_doubling(s, &cfg.require_corpus()?, &params::<DoublingConfig>(cfg, &[])?)),
            "multiplicity_sweep" => explain(s, run_multiplicity_sweep(s, &params::<SweepConfig>(cfg, &[])?)),
            "equivalent_mask" => {
                explain(s, run_equivalent_mask(s, &cfg.require_corpus()?, &params::<EquivalentMaskConfig>(cfg, &[])?))
            }
            "flip_matrix" => explain(s, run_flip_matrix(s, &cfg.require_corpus()?, &params::<FlipConfig>(cfg, &[])?)),
            "contralateral" => explain(s, run_contralateral(s, &params::<ContralateralConfig>(cfg, &[])?)),
            "imperfect_repeat" => explain(
                s,
                run_imperfect_repeat(s, &cfg.require_corpus()?, &params::<ImperfectRepeatConfig>(cfg, &[])?),
            ),
            "needle_haystack" => explain(s, run_needle_haystack(s, &params::<NeedleConfig>(cfg, &[])?)),
            "skip" => explain(s, run_skip(s, &params::<SkipConfig>(cfg, &[])?)),
            "context_transform" => explain(s, run_context_transform(s, &params::<ContextTransformConfig>(cfg, &[])?)),
            other => return Err(UsageError(format!("unknown probe {other:?}")).into()),
        }?;
        self.emit(&report, name)
    }

    fn train_toy(&self, name: &str, steps: Option<usize>) -> Result<Outcome> {
        let Some(dir) = &self.cfg.out else {
            return Err(UsageError("train-toy needs --out for the checkpoint".into()).into());
        };
        let mut fixture = Fixture::by_name(name).ok_or_else(|| UsageError(format!("unknown fixture {name:?}")))?;
        if let Some(s) = steps {
            fixture.train.steps = s;
        }
        if let Some(seed) = self.cfg.seed {
            fixture.train.seed = seed;
            fixture.corpus.seed = seed;
        }
        self.echo_config()?;
        let corpus = sample_corpus(&fixture.corpus, fixture.corpus_size)?;
        let total = fixture.train.steps;
        let progress = |r: &iclaudit::models::TraceRow| {
            if r.step % 500 == 0 || r.step + 1 == total {
                eprintln!("step {:>6}/{total} loss {:.4}", r.step, r.loss);
            }
        };
        let meta = serde_json::json!({ "fixture": fixture.name, "fingerprint": fixture.fingerprint() });
        let ckpt = dir.join(format!("{}.ckpt", fixture.name));
        let outcome = match train_masked_lm(fixture.model.build()?, &corpus, &fixture.train, progress) {
            Ok(o) => o,
            Err(TrainError::Diverged { step, last_good_step, last_good, trace }) => {
                save_checkpoint(&ckpt, &last_good, &meta)?;
                trace.write_csv(std::fs::File::create(dir.join("train_loss.csv"))?)?;
                return Err(anyhow::anyhow!(
                    "training diverged at step {step}; saved the step-{last_good_step} model to {}",
                    ckpt.display()
                ));
            }
            Err(e) => return Err(e.into()),
        };
        save_checkpoint(&ckpt, &outcome.model, &meta)?;
        outcome.trace.write_csv(std::fs::File::create(dir.join("train_loss.csv"))?)?;
        std::fs::write(dir.join("fixture.json"), serde_json::to_string_pretty(&fixture)? + "\n")?;
        self.write_sidecar(dir, "train")?;
        eprintln!("wrote {}", ckpt.display());
        Ok(Outcome::Complete)
    }

    fn regression_config(&self) -> Result<(RegressionConfig, ProfileMode)> {
        let mut merged = serde_json::to_value(RegressionConfig::default())?;
        let mut mode = ProfileMode::OneAtATime;
        for (k, v) in &self.cfg.params {
            let v = serde_json::to_value(v)?;
            if k == "mode" {
                mode = serde_json::from_value(v).map_err(|e| UsageError(format!("bad mode: {e}")))?;
            } else if k != "mlp" && merged.get(k).is_some() {
                merged[k] = v;
            } else if merged["mlp"].get(k).is_some() {
                merged["mlp"][k] = v;
            } else {
                return Err(UsageError(format!("unknown parameter {k:?} for embed-regress")).into());
            }
        }
        if self.cfg.seed.is_some() || !self.cfg.params.contains_key("seed") {
            merged["seed"] = Value::from(self.cfg.seed());
        }
        let cfg = serde_json::from_value(merged).map_err(|e| UsageError(format!("bad parameter: {e}")))?;
        Ok((cfg, mode))
    }

    fn embed_regress(&self) -> Result<Outcome> {
        let (reg, mode) = self.regression_config()?;
        let corpus = self.cfg.require_corpus()?;
        let scorer = self.cfg.scorer()?;
        if !scorer.capabilities().embeddings {
            let caps = serde_json::to_string(&scorer.capabilities())?;
            return Err(CapabilityError(format!(
                "embed-regress needs per-position embeddings; scorer {} declares {caps}",
                scorer.name()
            ))
            .into());
        }
        let groups = build_groups(&corpus, &GroupSpec::standard(), reg.seed)?;
        let data = explain(&*scorer, extract_training_set(&*scorer, &groups, mode))?;
        let report = train_and_evaluate(&scorer.name(), &data, &reg)?;
        self.echo_config()?;
        match &self.cfg.out {
            Some(dir) => {
                for p in report.write(dir, "embed_regress", self.cfg.emit_svg)? {
                    eprintln!("wrote {}", p.display());
                }
                self.write_sidecar(dir, "embed_regress")?;
            }
            None => print!("{}", report.summary_csv()?),
        }
        Ok(Outcome::Complete)
    }

    fn filter(&self, pppl_min: Option<f64>, scores: Option<&Path>) -> Result<Outcome> {
        let min = pppl_min
            .or(self.cfg.pppl_min)
            .ok_or_else(|| UsageError("filter needs --pppl-min or pppl_min in the config".into()))?;
        let corpus = self.cfg.corpus()?;
        let keep: BTreeSet<String> = match scores {
            Some(path) => return self.filter_scores_file(path, min, corpus),
            None => {
                let corpus = corpus.as_ref().ok_or_else(|| {
                    UsageError("filter needs --scores <csv> or a corpus to score".into())
                })?;
                let scorer = self.cfg.scorer()?;
                let mode: ProfileMode = params::<ScoreConfig>(self.cfg, &[])
                    .map(|c| if self.cfg.params.contains_key("mode") { c.mode } else { ProfileMode::Ofs })?;
                let report = explain(&*scorer, run_score(&*scorer, corpus, &ScoreConfig { mode, seed: self.cfg.seed() }))?;
                if let Some(dir) = &self.cfg.out {
                    report.write(dir, "filter_scores", false)?;
                }
                ids_above(&report, min).into_iter().collect()
            }
        };
        let kept: Vec<_> = corpus.unwrap_or_default().into_iter().filter(|x| keep.contains(x.id())).collect();
        eprintln!("kept {} sequences with pppl > {min}", kept.len());
        self.echo_config()?;
        self.write_fasta(&kept)
    }

    fn write_fasta(&self, kept: &[iclaudit::seqcore::Sequence]) -> Result<Outcome> {
        match &self.cfg.out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join("filtered.fasta");
                write_fasta(std::fs::File::create(&path)?, kept)?;
                self.write_sidecar(dir, "filter")?;
                eprintln!("wrote {}", path.display());
            }
            None => write_fasta(std::io::stdout().lock(), kept)?,
        }
        Ok(Outcome::Complete)
    }

    /// Filters an existing scores CSV. With a corpus the retained sequences
    /// are written as FASTA, otherwise the retained CSV rows are.
    fn filter_scores_file(
        &self,
        path: &Path,
        min: f64,
        corpus: Option<Vec<iclaudit::seqcore::Sequence>>,
    ) -> Result<Outcome> {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| UsageError(format!("{} has no {name:?} column", path.display())))
        };
        let (id_col, pppl_col) = (col("id")?, col("pppl")?);
        let flag_col = headers.iter().position(|h| h == "flag");
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let flagged = flag_col.is_some_and(|c| !rec[c].is_empty());
            let pppl: Option<f64> = rec[pppl_col].parse().ok();
            if !flagged && pppl.is_some_and(|p| p > min) {
                rows.push(rec);
            }
        }
        eprintln!("kept {} rows with pppl > {min}", rows.len());
        self.echo_config()?;
        match corpus {
            Some(c) => {
                let keep: BTreeSet<&str> = rows.iter().map(|r| &r[id_col]).collect();
                let kept: Vec<_> = c.into_iter().filter(|x| keep.contains(x.id())).collect();
                self.write_fasta(&kept)
            }
            None => {
                let sink: Box<dyn Write> = match &self.cfg.out {
                    Some(dir) => {
                        std::fs::create_dir_all(dir)?;
                        Box::new(std::fs::File::create(dir.join("filtered.csv"))?)
                    }
                    None => Box::new(std::io::stdout().lock()),
                };
                let mut w = csv::Writer::from_writer(sink);
                w.write_record(&headers)?;
                for r in &rows {
                    w.write_record(r)?;
                }
                w.flush()?;
                Ok(Outcome::Complete)
            }
        }
    }
}
