//! Declarative experiment file (TOML).
//!
//! ```toml
//! output_dir = "runs/table3"
//! max_in_flight = 4
//!
//! [[datasets]]
//! name = "stvqa"
//! root = "data/stvqa"
//!
//! [[models]]
//! model_id = "vicuna-13b"
//! endpoint_url = "http://localhost:8000/v1/chat/completions"
//!
//! [[ocr_sources]]
//! name = "paddleocr"
//! corpus = "ocr/paddle.jsonl"
//!
//! [[ocr_sources]]
//! name = "groundtruth"
//! corpus = "ocr/paddle.jsonl"
//! corrections = "ocr/corrected.jsonl"
//!
//! [subset]
//! n = 50
//! seed = 0
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::eval::MatchMode;
use crate::gateway::ModelConfig;
use crate::layout::{SerializeMode, SerializerOptions};
use crate::ocr::OcrFormat;
use crate::prompt::TemplateId;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// Numeric layout knobs; the serializer mode is chosen per dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutParams {
    pub line_overlap_threshold: f64,
    pub column_gap_factor: f64,
    pub table_min_rows: usize,
    pub table_min_cols: usize,
}

impl Default for LayoutParams {
    fn default() -> Self {
        let d = SerializerOptions::default();
        LayoutParams {
            line_overlap_threshold: d.line_overlap_threshold,
            column_gap_factor: d.column_gap_factor,
            table_min_rows: d.table_min_rows,
            table_min_cols: d.table_min_cols,
        }
    }
}

fn default_ocrvqa_split() -> Option<u64> {
    Some(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: Dataset,
    /// Directory holding the annotation file, or the file itself.
    pub root: PathBuf,
    /// Defaults to markdown for DocVQA and plain for the others.
    #[serde(default)]
    pub mode: Option<SerializeMode>,
    /// Defaults to the document template for DocVQA and the generic one otherwise.
    #[serde(default)]
    pub template: Option<TemplateId>,
    #[serde(default)]
    pub layout: LayoutParams,
    /// Overrides the experiment-wide shot pool.
    #[serde(default)]
    pub shot_pool: Option<PathBuf>,
    #[serde(default = "default_ocrvqa_split")]
    pub ocrvqa_split: Option<u64>,
}

impl DatasetConfig {
    pub fn new(name: Dataset, root: impl Into<PathBuf>) -> Self {
        DatasetConfig {
            name,
            root: root.into(),
            mode: None,
            template: None,
            layout: LayoutParams::default(),
            shot_pool: None,
            ocrvqa_split: default_ocrvqa_split(),
        }
    }

    pub fn serializer_options(&self) -> SerializerOptions {
        let routed = if self.name == Dataset::Docvqa {
            SerializeMode::Markdown
        } else {
            SerializeMode::Plain
        };
        SerializerOptions {
            mode: self.mode.unwrap_or(routed),
            line_overlap_threshold: self.layout.line_overlap_threshold,
            column_gap_factor: self.layout.column_gap_factor,
            table_min_rows: self.layout.table_min_rows,
            table_min_cols: self.layout.table_min_cols,
        }
    }

    pub fn template_id(&self) -> TemplateId {
        self.template.unwrap_or(if self.name == Dataset::Docvqa {
            TemplateId::Docvqa
        } else {
            TemplateId::Generic
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrSourceConfig {
    pub name: String,
    pub corpus: PathBuf,
    #[serde(default = "default_format")]
    pub format: OcrFormat,
    #[serde(default)]
    pub corrections: Option<PathBuf>,
}

fn default_format() -> OcrFormat {
    OcrFormat::Canonical
}

impl OcrSourceConfig {
    pub fn new(name: impl Into<String>, corpus: impl Into<PathBuf>) -> Self {
        OcrSourceConfig {
            name: name.into(),
            corpus: corpus.into(),
            format: OcrFormat::Canonical,
            corrections: None,
        }
    }
}

/// In-context example policy. Without a pool the fixed three examples are used
/// (the first `k` of them when `k` is set). With a pool, `k` shots (default 3)
/// are drawn once per dataset, or once per sample if `resample_per_sample`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShotPolicy {
    pub k: Option<usize>,
    pub seed: u64,
    pub pool: Option<PathBuf>,
    pub resample_per_sample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetConfig {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            enabled: true,
            dir: None,
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub max_in_flight: usize,
    pub datasets: Vec<DatasetConfig>,
    pub models: Vec<ModelConfig>,
    pub ocr_sources: Vec<OcrSourceConfig>,
    #[serde(default)]
    pub shots: ShotPolicy,
    #[serde(default)]
    pub subset: Option<SubsetConfig>,
    #[serde(default)]
    pub cache: CacheConfig,
    #[serde(default)]
    pub match_mode: MatchMode,
    /// Tokens below this confidence are dropped before serialization.
    #[serde(default)]
    pub min_confidence: f64,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(
        output_dir: impl Into<PathBuf>,
        datasets: Vec<DatasetConfig>,
        models: Vec<ModelConfig>,
        ocr_sources: Vec<OcrSourceConfig>,
    ) -> Self {
        ExperimentConfig {
            name: None,
            output_dir: output_dir.into(),
            max_in_flight: 1,
            datasets,
            models,
            ocr_sources,
            shots: ShotPolicy::default(),
            subset: None,
            cache: CacheConfig::default(),
            match_mode: MatchMode::default(),
            min_confidence: 0.0,
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let cfg = Self::from_toml_str(&text, &base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn cache_path(&self) -> PathBuf {
        match &self.cache.dir {
            Some(d) => self.resolve(d),
            None => self.output_path().join("cache"),
        }
    }

    pub fn dataset(&self, d: Dataset) -> Option<&DatasetConfig> {
        self.datasets.iter().find(|c| c.name == d)
    }

    /// Field-level checks, including that every referenced file exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        let mut exists = |field: String, p: &Path| {
            if !self.resolve(p).exists() {
                problems.push(format!(
                    "{field}: {} does not exist",
                    self.resolve(p).display()
                ));
            }
        };
        for (i, d) in self.datasets.iter().enumerate() {
            exists(format!("datasets[{i}].root"), &d.root);
            if let Some(pool) = &d.shot_pool {
                exists(format!("datasets[{i}].shot_pool"), pool);
            }
        }
        for (i, s) in self.ocr_sources.iter().enumerate() {
            exists(format!("ocr_sources[{i}].corpus"), &s.corpus);
            if let Some(c) = &s.corrections {
                exists(format!("ocr_sources[{i}].corrections"), c);
            }
        }
        if let Some(pool) = &self.shots.pool {
            exists("shots.pool".into(), pool);
        }

        if self.datasets.is_empty() {
            problems.push("datasets: at least one dataset is required".into());
        }
        if self.models.is_empty() {
            problems.push("models: at least one model is required".into());
        }
        if self.ocr_sources.is_empty() {
            problems.push("ocr_sources: at least one OCR source is required".into());
        }
        if self.max_in_flight == 0 {
            problems.push("max_in_flight: must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            problems.push("min_confidence: must be in [0, 1]".into());
        }
        if let Some(s) = &self.subset {
            if s.n == 0 {
                problems.push("subset.n: must be at least 1".into());
            }
        }
        for (i, d) in self.datasets.iter().enumerate() {
            if self.datasets[..i].iter().any(|o| o.name == d.name) {
                problems.push(format!("datasets[{i}].name: `{}` listed twice", d.name));
            }
            if let Err(e) = d.serializer_options().validate() {
                problems.push(format!("datasets[{i}].layout: {e}"));
            }
        }
        for (i, m) in self.models.iter().enumerate() {
            if let Err(e) = m.validate() {
                problems.push(format!("models[{i}]: {e}"));
            }
            if self.models[..i].iter().any(|o| o.model_id == m.model_id) {
                problems.push(format!(
                    "models[{i}].model_id: `{}` listed twice",
                    m.model_id
                ));
            }
        }
        for (i, s) in self.ocr_sources.iter().enumerate() {
            if s.name.trim().is_empty() || s.name.contains('+') {
                problems.push(format!(
                    "ocr_sources[{i}].name: must be non-empty and free of `+`"
                ));
            }
            if self.ocr_sources[..i].iter().any(|o| o.name == s.name) {
                problems.push(format!("ocr_sources[{i}].name: `{}` listed twice", s.name));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }
}
