//! Run reports: an accuracy grid, a per-cell metrics CSV and run metadata.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::execute::RunOutcome;
use super::{Experiment, RunError, ACCURACY_FILE, META_FILE, METRICS_FILE};
use crate::dataset::Dataset;
use crate::eval::{self, EvalRecord, Metrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: ExperimentConfig,
    pub plan_hash: String,
    pub normalization_version: String,
    /// RFC 3339 timestamps.
    pub started_at: String,
    pub finished_at: String,
    pub trials: usize,
    pub completed: usize,
    pub executed: usize,
    pub errors: usize,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub metrics: Vec<Metrics>,
    pub accuracy_grid: String,
    pub accuracy_path: PathBuf,
    pub metrics_path: PathBuf,
    pub meta_path: PathBuf,
}

/// Renders a Markdown grid with one row per `<ocr>+<model>` method and one
/// column per dataset, for every dataset in `datasets` or in `records`. Rows
/// follow `methods`; methods absent from that list are appended in sorted
/// order. Cells without records show `-`.
pub fn render_accuracy_grid(
    records: &[EvalRecord],
    methods: &[String],
    datasets: &[Dataset],
) -> String {
    let mut cells: BTreeMap<(String, Dataset), (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = cells
            .entry((format!("{}+{}", r.ocr_name, r.model_id), r.dataset))
            .or_default();
        e.0 += usize::from(r.correct);
        e.1 += 1;
    }
    let datasets: Vec<Dataset> = Dataset::ALL
        .into_iter()
        .filter(|d| datasets.contains(d) || records.iter().any(|r| r.dataset == *d))
        .collect();
    let mut rows: Vec<String> = methods.to_vec();
    for (m, _) in cells.keys() {
        if !rows.contains(m) {
            rows.push(m.clone());
        }
    }

    let mut out = String::from("| Method |");
    for d in &datasets {
        out.push_str(&format!(" {} |", d.display_name()));
    }
    out.push_str("\n| --- |");
    for _ in &datasets {
        out.push_str(" --- |");
    }
    out.push('\n');
    for m in &rows {
        out.push_str(&format!("| {m} |"));
        for d in &datasets {
            match cells.get(&(m.clone(), *d)) {
                Some((c, n)) => out.push_str(&format!(" {} |", eval::format_accuracy(*c, *n))),
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

fn method_order(cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = Vec::new();
    for s in &cfg.ocr_sources {
        for m in &cfg.models {
            out.push(format!("{}+{}", s.name, m.model_id));
        }
    }
    out
}

fn metrics_csv(metrics: &[Metrics]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset",
        "model_id",
        "ocr_name",
        "ocr_source",
        "n",
        "n_correct",
        "accuracy",
    ])?;
    for m in metrics {
        w.write_record([
            m.dataset.as_str().to_string(),
            m.model_id.clone(),
            m.ocr_name.clone(),
            m.ocr_source.to_string(),
            m.n.to_string(),
            m.n_correct.to_string(),
            m.accuracy_str(),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Writes `accuracy.md`, `metrics.csv` and `run_meta.json` into `dir`.
pub fn emit_report(
    records: &[EvalRecord],
    meta: &RunMeta,
    dir: &Path,
) -> Result<ReportBundle, RunError> {
    std::fs::create_dir_all(dir).map_err(RunError::io(dir))?;
    let metrics = eval::aggregate(records);
    let datasets: Vec<Dataset> = meta.config.datasets.iter().map(|d| d.name).collect();
    let grid = render_accuracy_grid(records, &method_order(&meta.config), &datasets);

    let accuracy_path = dir.join(ACCURACY_FILE);
    std::fs::write(&accuracy_path, &grid).map_err(RunError::io(&accuracy_path))?;

    let metrics_path = dir.join(METRICS_FILE);
    let csv = metrics_csv(&metrics).map_err(|e| RunError::RunLog {
        path: metrics_path.clone(),
        message: e.to_string(),
    })?;
    std::fs::write(&metrics_path, csv).map_err(RunError::io(&metrics_path))?;

    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(meta).expect("run meta serializes");
    std::fs::write(&meta_path, json + "\n").map_err(RunError::io(&meta_path))?;

    Ok(ReportBundle {
        metrics,
        accuracy_grid: grid,
        accuracy_path,
        metrics_path,
        meta_path,
    })
}

/// Reads `run_meta.json` from a run directory.
pub fn load_run_meta(dir: &Path) -> Result<RunMeta, RunError> {
    let path = dir.join(META_FILE);
    let raw = std::fs::read(&path).map_err(RunError::io(&path))?;
    serde_json::from_slice(&raw).map_err(|e| RunError::RunLog {
        path,
        message: e.to_string(),
    })
}

impl Experiment {
    /// Writes the report for `outcome` into the output directory.
    pub fn report(&self, outcome: &RunOutcome) -> Result<ReportBundle, RunError> {
        let now = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        let meta = RunMeta {
            config: self.cfg.clone(),
            plan_hash: self.plan.plan_hash.clone(),
            normalization_version: eval::NORMALIZATION_VERSION.to_string(),
            started_at: outcome.started_at.clone().unwrap_or_else(|| now.clone()),
            finished_at: now,
            trials: self.plan.len(),
            completed: outcome.records.len(),
            executed: outcome.executed,
            errors: outcome.errors.len(),
            notes: self.notes(),
        };
        emit_report(&outcome.records, &meta, &self.output_dir())
    }

    fn notes(&self) -> Vec<String> {
        let mut notes = vec!["text-only prompts: no image input is sent to the model".to_string()];
        for d in &self.cfg.datasets {
            let n = self.samples(d.name).len();
            let split = match (d.name, d.ocrvqa_split) {
                (Dataset::Ocrvqa, Some(s)) => format!(", split {s}"),
                (Dataset::Ocrvqa, None) => ", all splits".to_string(),
                _ => String::new(),
            };
            notes.push(format!("{}: {n} samples{split}", d.name.as_str()));
        }
        notes
    }
}
