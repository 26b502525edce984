use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::svg::{heatmap_svg, line_svg, quantile_bands_svg};
use super::ProbeError;

/// Bumped whenever the report layout changes.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One result row: condition keys plus metric values. An optional flag
/// marks rows whose metrics are missing or not meaningful.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub keys: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

impl Row {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn key(mut self, name: &str, value: impl ToString) -> Self {
        self.keys.insert(name.into(), value.to_string());
        self
    }

    pub fn metric(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.into(), value);
        self
    }

    pub fn flagged(mut self, why: impl Into<String>) -> Self {
        self.flag = Some(why.into());
        self
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).copied()
    }

    pub fn key_value(&self, key: &str) -> Option<&str> {
        self.keys.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Sub-seeds derived from `seed`, by purpose.
    #[serde(default)]
    pub derived_seeds: BTreeMap<String, u64>,
    /// Queries issued to the scorer, counting every masked variant.
    pub scorer_queries: u64,
}

/// Which quicklook plot suits a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Plot {
    /// Quantile bands of `metric` for each value of `group_key`.
    Bands { group_key: String, metric: String },
    /// Quantile bands of several metric columns side by side.
    Metrics { metrics: Vec<String> },
    /// Grid of per-cell medians of `metric`.
    Heatmap { row_key: String, col_key: String, metric: String },
    /// Rows as matrix rows labelled by `row_key`, one column per metric.
    Matrix { row_key: String, metrics: Vec<String> },
    /// One line per value of `series_key` (or a single line), with numeric `x_key`.
    Lines { x_key: String, series_key: Option<String>, metric: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub schema_version: u32,
    pub probe: String,
    pub probe_version: u32,
    pub scorer: String,
    /// The full probe config, echoed.
    pub config: serde_json::Value,
    pub rows: Vec<Row>,
    pub provenance: Provenance,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<Plot>,
}

/// Run facts that legitimately differ between identical runs; written
/// beside the report so the report itself stays byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSidecar {
    pub started_unix_secs: u64,
    pub elapsed_secs: f64,
    pub workers: usize,
    pub tool_version: String,
}

impl RunSidecar {
    pub fn new(started: std::time::SystemTime, workers: usize) -> Self {
        Self {
            started_unix_secs: started
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            elapsed_secs: started.elapsed().map(|d| d.as_secs_f64()).unwrap_or(0.0),
            workers,
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

impl ProbeReport {
    pub fn new(probe: &str, probe_version: u32, scorer: String, config: &impl Serialize, seed: u64) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            probe: probe.into(),
            probe_version,
            scorer,
            config: serde_json::to_value(config).expect("probe configs serialize"),
            rows: Vec::new(),
            provenance: Provenance { seed, ..Provenance::default() },
            notes: Vec::new(),
            plot: None,
        }
    }

    /// Flags any row carrying a non-finite metric that is not already flagged.
    pub(crate) fn finish(mut self, queries: u64) -> Self {
        self.provenance.scorer_queries = queries;
        for r in &mut self.rows {
            if r.flag.is_none() && r.metrics.values().any(|v| !v.is_finite()) {
                r.flag = Some("non-finite metric".into());
            }
        }
        self
    }

    pub fn flagged_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.flag.is_some()).count()
    }

    /// True when some rows could not be computed.
    pub fn is_partial(&self) -> bool {
        self.flagged_rows() > 0
    }

    /// Values of `metric` over unflagged rows, in row order.
    pub fn values(&self, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.flag.is_none())
            .filter_map(|r| r.get(metric))
            .collect()
    }

    /// Values of `metric` over unflagged rows whose `key` equals `value`.
    pub fn values_where(&self, metric: &str, key: &str, value: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.flag.is_none() && r.key_value(key) == Some(value))
            .filter_map(|r| r.get(metric))
            .collect()
    }

    /// Rows in a canonical order, for schedule-independent comparison.
    pub fn sorted_rows(&self) -> Vec<Row> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| {
            a.keys
                .cmp(&b.keys)
                .then_with(|| serde_json::to_string(a).unwrap().cmp(&serde_json::to_string(b).unwrap()))
        });
        rows
    }

    fn columns(&self) -> (Vec<String>, Vec<String>) {
        let keys: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.keys.keys()).collect();
        let metrics: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.metrics.keys()).collect();
        (keys.into_iter().cloned().collect(), metrics.into_iter().cloned().collect())
    }

    /// Flat CSV: key columns, metric columns, then `flag`. Missing cells are
    /// empty; floats use the shortest round-trip representation.
    pub fn to_csv(&self) -> Result<String, ProbeError> {
        let (keys, metrics) = self.columns();
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = keys
            .iter()
            .chain(metrics.iter())
            .map(String::as_str)
            .chain(["flag"])
            .collect();
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = keys.iter().map(|k| r.keys.get(k).cloned().unwrap_or_default()).collect();
            rec.extend(metrics.iter().map(|m| r.metrics.get(m).map(|v| v.to_string()).unwrap_or_default()));
            rec.push(r.flag.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| ProbeError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn svg(&self) -> Option<String> {
        let title = format!("{} / {}", self.probe, self.scorer);
        match self.plot.as_ref()? {
            Plot::Bands { group_key, metric } => {
                let groups = self.grouped(group_key, metric);
                Some(quantile_bands_svg(&title, metric, &groups))
            }
            Plot::Metrics { metrics } => {
                let groups: Vec<(String, Vec<f64>)> = metrics.iter().map(|m| (m.clone(), self.values(m))).collect();
                Some(quantile_bands_svg(&title, "value", &groups))
            }
            Plot::Heatmap { row_key, col_key, metric } => {
                let mut cells: BTreeMap<(Sortable, Sortable), Vec<f64>> = BTreeMap::new();
                for r in self.rows.iter().filter(|r| r.flag.is_none()) {
                    if let (Some(a), Some(b), Some(v)) = (r.key_value(row_key), r.key_value(col_key), r.get(metric)) {
                        cells.entry((Sortable::from(a), Sortable::from(b))).or_default().push(v);
                    }
                }
                let rows: BTreeSet<Sortable> = cells.keys().map(|k| k.0.clone()).collect();
                let cols: BTreeSet<Sortable> = cells.keys().map(|k| k.1.clone()).collect();
                let grid: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|a| {
                        cols.iter()
                            .map(|b| cells.get(&(a.clone(), b.clone())).map_or(f64::NAN, |v| super::median(v)))
                            .collect()
                    })
                    .collect();
                let rl: Vec<String> = rows.into_iter().map(|s| s.text).collect();
                let cl: Vec<String> = cols.into_iter().map(|s| s.text).collect();
                Some(heatmap_svg(&title, &rl, &cl, &grid))
            }
            Plot::Matrix { row_key, metrics } => {
                let labels: Vec<String> = self.rows.iter().map(|r| r.key_value(row_key).unwrap_or("?").to_string()).collect();
                let grid: Vec<Vec<f64>> = self
                    .rows
                    .iter()
                    .map(|r| metrics.iter().map(|m| r.get(m).unwrap_or(f64::NAN)).collect())
                    .collect();
                Some(heatmap_svg(&title, &labels, metrics, &grid))
            }
            Plot::Lines { x_key, series_key, metric } => {
                let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
                for r in self.rows.iter().filter(|r| r.flag.is_none()) {
                    let x = r.key_value(x_key).and_then(|s| s.parse::<f64>().ok());
                    let s = match series_key {
                        Some(k) => r.key_value(k),
                        None => Some(metric.as_str()),
                    };
                    if let (Some(x), Some(s), Some(y)) = (x, s, r.get(metric)) {
                        series.entry(s.to_string()).or_default().push((x, y));
                    }
                }
                let series: Vec<(String, Vec<(f64, f64)>)> = series.into_iter().collect();
                Some(line_svg(&title, metric, &series))
            }
        }
    }

    fn grouped(&self, key: &str, metric: &str) -> Vec<(String, Vec<f64>)> {
        let mut groups: BTreeMap<Sortable, Vec<f64>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.flag.is_none()) {
            if let (Some(k), Some(v)) = (r.key_value(key), r.get(metric)) {
                groups.entry(Sortable::from(k)).or_default().push(v);
            }
        }
        groups.into_iter().map(|(k, v)| (k.text, v)).collect()
    }

    /// Writes `<stem>.csv` and `<stem>.json`, plus `<stem>.svg` when asked
    /// and a plot applies. Returns the written paths.
    pub fn write(&self, dir: &Path, stem: &str, emit_svg: bool) -> Result<Vec<PathBuf>, ProbeError> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        let mut put = |name: String, body: String| -> Result<(), ProbeError> {
            let path = dir.join(name);
            atomic_write(&path, body.as_bytes())?;
            out.push(path);
            Ok(())
        };
        put(format!("{stem}.csv"), self.to_csv()?)?;
        put(format!("{stem}.json"), self.to_json())?;
        if emit_svg {
            if let Some(svg) = self.svg() {
                put(format!("{stem}.svg"), svg)?;
            }
        }
        Ok(out)
    }
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Orders numeric labels numerically and everything else lexically.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Sortable {
    text: String,
}

impl From<&str> for Sortable {
    fn from(s: &str) -> Self {
        Self { text: s.to_string() }
    }
}

impl Ord for Sortable {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self.text.parse::<f64>(), other.text.parse::<f64>()) {
            (Ok(a), Ok(b)) => a.total_cmp(&b).then_with(|| self.text.cmp(&other.text)),
            (Ok(_), Err(_)) => std::cmp::Ordering::Less,
            (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
            _ => self.text.cmp(&other.text),
        }
    }
}

impl PartialOrd for Sortable {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
