use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Axis;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{fit_mlp, FitOutcome, MlpSpec};
use super::{mean_entropy, EmbedError, GroupDataset};
use crate::probes::{atomic_write, line_svg, quantile_bands_svg};
use crate::scoring::{par_map, ScoreError};
use crate::seqcore::rng::{derive_seed, task_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionConfig {
    pub splits: usize,
    /// Fraction of sequence ids used for training in each split.
    pub train_fraction: f64,
    pub mlp: MlpSpec,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self { splits: 5, train_fraction: 0.8, mlp: MlpSpec::default(), seed: 0 }
    }
}

/// One regressor trained on one group under one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub group: String,
    pub split: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub val_loss: f64,
    /// Mean entropy of the validation targets.
    pub val_entropy: f64,
    pub fit: FitOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub group: String,
    pub split: usize,
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub mean_val_loss: f64,
    pub split_val_losses: Vec<f64>,
    pub mean_target_entropy: f64,
    pub n_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub scorer: String,
    pub config: RegressionConfig,
    pub summaries: Vec<GroupSummary>,
    pub splits: Vec<SplitOutcome>,
    pub notes: Vec<String>,
}

impl RegressionReport {
    pub fn summary(&self, group: &str) -> Option<&GroupSummary> {
        self.summaries.iter().find(|s| s.group == group)
    }

    /// Groups whose mean validation loss dips below their target entropy,
    /// which a correct cross-entropy cannot do.
    pub fn entropy_violations(&self) -> Vec<&str> {
        self.splits
            .iter()
            .filter(|s| s.val_loss < s.val_entropy - 1e-12)
            .map(|s| s.group.as_str())
            .collect()
    }

    pub fn loss_table(&self) -> Vec<LossRow> {
        self.splits
            .iter()
            .flat_map(|s| {
                s.fit.curve.iter().map(move |r| LossRow {
                    group: s.group.clone(),
                    split: s.split,
                    step: r.epoch,
                    train_loss: r.train_loss,
                    val_loss: r.val_loss,
                })
            })
            .collect()
    }

    pub fn loss_table_csv(&self) -> Result<String, EmbedError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.loss_table() {
            w.serialize(row)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
    }

    pub fn summary_csv(&self) -> Result<String, EmbedError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["group", "mean_val_loss", "mean_target_entropy", "n_examples"])?;
        for s in &self.summaries {
            w.write_record([
                s.group.clone(),
                s.mean_val_loss.to_string(),
                s.mean_target_entropy.to_string(),
                s.n_examples.to_string(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    /// Final validation losses per group as quantile bands, and the
    /// split-averaged validation curve of each group.
    pub fn svgs(&self) -> (String, String) {
        let bands: Vec<(String, Vec<f64>)> =
            self.summaries.iter().map(|s| (s.group.clone(), s.split_val_losses.clone())).collect();
        let mut curves: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        for s in &self.summaries {
            let runs: Vec<&SplitOutcome> = self.splits.iter().filter(|o| o.group == s.group).collect();
            let steps = runs.iter().map(|o| o.fit.curve.len()).min().unwrap_or(0);
            let pts = (0..steps)
                .map(|k| {
                    let v = runs.iter().map(|o| o.fit.curve[k].val_loss).sum::<f64>() / runs.len() as f64;
                    ((k + 1) as f64, v)
                })
                .collect();
            curves.push((s.group.clone(), pts));
        }
        (
            quantile_bands_svg(&format!("embedding regression / {}", self.scorer), "val_loss", &bands),
            line_svg(&format!("validation curves / {}", self.scorer), "val_loss", &curves),
        )
    }

    /// Writes `<stem>_losses.csv`, `<stem>_summary.csv` and `<stem>.json`,
    /// plus two SVG plots when asked.
    pub fn write(&self, dir: &Path, stem: &str, emit_svg: bool) -> Result<Vec<PathBuf>, EmbedError> {
        fs::create_dir_all(dir)?;
        let mut files = vec![
            (format!("{stem}_losses.csv"), self.loss_table_csv()?),
            (format!("{stem}_summary.csv"), self.summary_csv()?),
            (format!("{stem}.json"), self.to_json()),
        ];
        if emit_svg {
            let (bands, curves) = self.svgs();
            files.push((format!("{stem}_bands.svg"), bands));
            files.push((format!("{stem}_curves.svg"), curves));
        }
        let mut out = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            atomic_write(&path, body.as_bytes())?;
            out.push(path);
        }
        Ok(out)
    }
}

/// Row indices of the training and validation parts of each split. Whole
/// sequences move together so no sequence contributes to both sides.
fn split_rows(keys: &[(String, usize)], cfg: &RegressionConfig) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut ids: Vec<&str> = Vec::new();
    let mut by_id: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (r, (id, _)) in keys.iter().enumerate() {
        let rows = by_id.entry(id.as_str()).or_default();
        if rows.is_empty() {
            ids.push(id);
        }
        rows.push(r);
    }
    let n_train = ((cfg.train_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let split_seed = derive_seed(cfg.seed, "regression-split");
    (0..cfg.splits)
        .map(|s| {
            let mut order = ids.clone();
            order.shuffle(&mut task_rng(split_seed, s as u64));
            let mut train: Vec<usize> = order[..n_train].iter().flat_map(|id| by_id[id].iter().copied()).collect();
            let mut val: Vec<usize> = order[n_train..].iter().flat_map(|id| by_id[id].iter().copied()).collect();
            train.sort_unstable();
            val.sort_unstable();
            (train, val)
        })
        .collect()
}

/// Trains one regressor per (group, split) and averages validation
/// cross-entropy over splits. All groups share the splits, the network
/// shape, the initialization seed and the training budget.
pub fn train_and_evaluate(
    scorer: &str,
    data: &[GroupDataset],
    cfg: &RegressionConfig,
) -> Result<RegressionReport, EmbedError> {
    let Some(first) = data.first() else {
        return Err(EmbedError::Config("no group datasets".into()));
    };
    if cfg.splits == 0 || !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(EmbedError::Config("need at least one split and a train fraction in (0, 1)".into()));
    }
    if data.iter().any(|d| d.keys != first.keys) {
        return Err(EmbedError::Config("group datasets are not position-aligned".into()));
    }
    let distinct = first.keys.iter().map(|k| &k.0).collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(EmbedError::Config("splitting by sequence needs at least two sequences".into()));
    }
    let splits = split_rows(&first.keys, cfg);
    let jobs: Vec<(usize, usize)> = (0..data.len()).flat_map(|g| (0..cfg.splits).map(move |s| (g, s))).collect();
    // Errors cross the parallel map as score errors and are restored below.
    let results = par_map(&jobs, |&(g, s)| {
        let d = &data[g];
        let (train, val) = &splits[s];
        let pick = |rows: &[usize]| (d.inputs.select(Axis(0), rows), d.targets.select(Axis(0), rows));
        let (x, y) = pick(train);
        let (vx, vy) = pick(val);
        let seed = derive_seed(cfg.seed, &format!("regressor:{s}"));
        match fit_mlp(&x.view(), &y.view(), &vx.view(), &vy.view(), &cfg.mlp, seed) {
            Ok((_, fit)) => Ok(Ok(SplitOutcome {
                group: d.group.label(),
                split: s,
                n_train: train.len(),
                n_val: val.len(),
                val_loss: fit.best_val_loss,
                val_entropy: mean_entropy(&d.targets, Some(val)),
                fit,
            })),
            Err(e) => Ok(Err(e)),
        }
    })
    .map_err(|e: ScoreError| EmbedError::Score(e))?;
    let outcomes: Vec<SplitOutcome> = results.into_iter().collect::<Result<_, _>>()?;

    let summaries = data
        .iter()
        .map(|d| {
            let label = d.group.label();
            let runs: Vec<&SplitOutcome> = outcomes.iter().filter(|o| o.group == label).collect();
            let k = runs.len() as f64;
            GroupSummary {
                mean_val_loss: runs.iter().map(|o| o.val_loss).sum::<f64>() / k,
                split_val_losses: runs.iter().map(|o| o.val_loss).collect(),
                mean_target_entropy: runs.iter().map(|o| o.val_entropy).sum::<f64>() / k,
                n_examples: d.len(),
                group: label,
            }
        })
        .collect();
    let mut notes = vec!["splits partition whole sequences; no sequence appears in both training and validation".into()];
    let retried = outcomes.iter().filter(|o| o.fit.retried).count();
    if retried > 0 {
        notes.push(format!("{retried} regressors diverged and were retrained at half the learning rate"));
    }
    Ok(RegressionReport { scorer: scorer.to_string(), config: cfg.clone(), summaries, splits: outcomes, notes })
}

#[cfg(test)]
mod tests {
    use super::super::{build_groups, extract_training_set, GroupSpec};
    use super::*;
    use crate::models::UniformScorer;
    use crate::probes::{random_corpus, ProfileMode};
    use crate::seqcore::Alphabet;

    fn small() -> RegressionConfig {
        RegressionConfig {
            splits: 2,
            mlp: MlpSpec { hidden: vec![8], max_epochs: 5, ..MlpSpec::default() },
            ..RegressionConfig::default()
        }
    }

    fn one_hot_data() -> Vec<GroupDataset> {
        let xs = random_corpus(10, 10, 20, &Alphabet::protein(), 2).unwrap();
        let g = build_groups(&xs, &[GroupSpec::OneHot], 0).unwrap();
        extract_training_set(&UniformScorer, &g, ProfileMode::Ofs).unwrap()
    }

    #[test]
    fn splits_never_share_a_sequence() {
        let keys: Vec<(String, usize)> =
            (0..10).flat_map(|i| (0..3).map(move |p| (format!("s{i}"), p))).collect();
        for (train, val) in split_rows(&keys, &RegressionConfig::default()) {
            assert_eq!(train.len(), 24);
            assert_eq!(val.len(), 6);
            let ids = |rows: &[usize]| rows.iter().map(|&r| keys[r].0.clone()).collect::<std::collections::BTreeSet<_>>();
            assert!(ids(&train).is_disjoint(&ids(&val)));
        }
    }

    #[test]
    fn uniform_targets_are_learned_to_their_entropy() {
        let cfg = RegressionConfig {
            mlp: MlpSpec { hidden: vec![8], max_epochs: 200, learning_rate: 3e-2, patience: 20, ..MlpSpec::default() },
            ..small()
        };
        let r = train_and_evaluate("uniform", &one_hot_data(), &cfg).unwrap();
        let s = r.summary("one-hot").unwrap();
        assert!((s.mean_target_entropy - 20f64.ln()).abs() < 1e-12);
        assert!(s.mean_val_loss >= s.mean_target_entropy);
        assert!(s.mean_val_loss - s.mean_target_entropy < 1e-3, "{}", s.mean_val_loss);
        assert!(r.entropy_violations().is_empty());
    }

    #[test]
    fn loss_table_and_files() {
        let r = train_and_evaluate("uniform", &one_hot_data(), &small()).unwrap();
        let csv = r.loss_table_csv().unwrap();
        assert!(csv.starts_with("group,split,step,train_loss,val_loss\n"));
        assert_eq!(csv.lines().count(), 1 + r.loss_table().len());
        let dir = tempfile::tempdir().unwrap();
        let files = r.write(dir.path(), "embed", true).unwrap();
        assert_eq!(files.len(), 5);
        let again = train_and_evaluate("uniform", &one_hot_data(), &small()).unwrap();
        assert_eq!(r.to_json(), again.to_json());
    }

    #[test]
    fn misaligned_groups_rejected() {
        let mut d = one_hot_data();
        let mut other = d[0].clone();
        other.keys.swap(0, 1);
        d.push(other);
        assert!(train_and_evaluate("u", &d, &small()).is_err());
        assert!(train_and_evaluate("u", &[], &small()).is_err());
    }
}
