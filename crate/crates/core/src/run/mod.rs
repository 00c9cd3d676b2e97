//! Experiment orchestration: config → plan → trials → run log → report.
//!
//! [`Experiment::load`] reads every artifact a config references, draws the
//! sample subsets and expands the run matrix. [`Experiment::execute`] then runs
//! whatever trials are missing from the output directory's run log, so an
//! interrupted run picks up where it stopped.

mod config;
mod execute;
mod log;
mod plan;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::dataset::{self, Dataset, DatasetError, LoadOptions, Sample};
use crate::eval::EvalRecord;
use crate::gateway::{CacheError, Gateway, GatewayError};
use crate::ocr::{OcrCorpus, OcrCorrectionSet, OcrError};
use crate::prompt::{self, PromptError, Shot};

pub use config::{
    CacheConfig, ConfigError, DatasetConfig, ExperimentConfig, LayoutParams, OcrSourceConfig,
    ShotPolicy, SubsetConfig,
};
pub use execute::{ExecuteOptions, RunOutcome, TrialError};
pub use log::{read_run_log, write_run_log, RunLog, RunLogHeader, RUN_LOG_FORMAT};
pub use plan::{RunPlan, TrialSpec};
pub use report::{emit_report, load_run_meta, render_accuracy_grid, ReportBundle, RunMeta};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const META_FILE: &str = "run_meta.json";
pub const ACCURACY_FILE: &str = "accuracy.md";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("OCR file {}: {source}", .path.display())]
    Ocr { path: PathBuf, source: OcrError },
    #[error("shots: {0}")]
    Shots(#[from] PromptError),
    #[error("model: {0}")]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("{}: {message}", .path.display())]
    RunLog { path: PathBuf, message: String },
    #[error(
        "existing run log belongs to plan {found}, expected {expected}; use a fresh output_dir"
    )]
    PlanMismatch { expected: String, found: String },
    #[error("io at {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    /// CLI exit code: 1 for bad configuration or inputs, 3 for fatal IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Io { .. } | RunError::Cache(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> RunError {
        let path = path.into();
        move |source| RunError::Io { path, source }
    }
}

pub(crate) struct OcrSourceData {
    corpus: OcrCorpus,
    corrections: Option<OcrCorrectionSet>,
}

pub(crate) enum ShotSource {
    Fixed(Vec<Shot>),
    Resampled {
        pool: Vec<Shot>,
        k: usize,
        seed: u64,
    },
}

impl ShotSource {
    fn for_sample(&self, sample_id: &str) -> Result<Vec<Shot>, PromptError> {
        match self {
            ShotSource::Fixed(shots) => Ok(shots.clone()),
            ShotSource::Resampled { pool, k, seed } => {
                let digest = Sha256::digest(sample_id.as_bytes());
                let salt = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
                prompt::select_shots(pool, *k, seed ^ salt)
            }
        }
    }
}

/// Everything a config references, loaded and ready to run.
pub struct Experiment {
    cfg: ExperimentConfig,
    samples: BTreeMap<Dataset, Vec<Sample>>,
    sample_index: HashMap<(Dataset, String), usize>,
    ocr: BTreeMap<String, OcrSourceData>,
    shots: HashMap<Dataset, ShotSource>,
    gateways: BTreeMap<String, Arc<Gateway>>,
    plan: RunPlan,
}

impl Experiment {
    pub fn load(cfg: ExperimentConfig) -> Result<Self, RunError> {
        cfg.validate()?;

        let mut samples = BTreeMap::new();
        let mut plan_samples = Vec::new();
        for d in &cfg.datasets {
            let opts = LoadOptions {
                ocrvqa_split: d.ocrvqa_split,
            };
            let mut loaded = dataset::load_dataset_with(&cfg.resolve(&d.root), d.name, opts)?;
            if let Some(sub) = &cfg.subset {
                loaded = dataset::sample_subset(&loaded, sub.n, sub.seed)?;
            }
            plan_samples.push((d.name, loaded.iter().map(|s| s.sample_id.clone()).collect()));
            samples.insert(d.name, loaded);
        }
        let sample_index = samples
            .iter()
            .flat_map(|(d, list)| {
                list.iter()
                    .enumerate()
                    .map(move |(i, s)| ((*d, s.sample_id.clone()), i))
            })
            .collect();

        let mut ocr = BTreeMap::new();
        for s in &cfg.ocr_sources {
            let path = cfg.resolve(&s.corpus);
            let raw = std::fs::read(&path).map_err(RunError::io(&path))?;
            let corpus = OcrCorpus::read(&raw, s.format).map_err(|source| RunError::Ocr {
                path: path.clone(),
                source,
            })?;
            let corrections = match &s.corrections {
                Some(c) => {
                    let path = cfg.resolve(c);
                    let raw = std::fs::read(&path).map_err(RunError::io(&path))?;
                    Some(
                        OcrCorrectionSet::read(raw.as_slice())
                            .map_err(|source| RunError::Ocr { path, source })?,
                    )
                }
                None => None,
            };
            ocr.insert(
                s.name.clone(),
                OcrSourceData {
                    corpus,
                    corrections,
                },
            );
        }

        let global_pool = match &cfg.shots.pool {
            Some(p) => Some(prompt::load_shot_pool(&cfg.resolve(p))?),
            None => None,
        };
        let mut shots = HashMap::new();
        for d in &cfg.datasets {
            let pool = match &d.shot_pool {
                Some(p) => Some(prompt::load_shot_pool(&cfg.resolve(p))?),
                None => global_pool.clone(),
            };
            let source = match pool {
                None => {
                    let mut fixed = prompt::default_shots();
                    if let Some(k) = cfg.shots.k {
                        if k > fixed.len() {
                            return Err(PromptError::InsufficientPool {
                                k,
                                pool: fixed.len(),
                            }
                            .into());
                        }
                        fixed.truncate(k);
                    }
                    ShotSource::Fixed(fixed)
                }
                Some(pool) => {
                    let k = cfg.shots.k.unwrap_or(3);
                    if cfg.shots.resample_per_sample {
                        if k > pool.len() {
                            return Err(PromptError::InsufficientPool {
                                k,
                                pool: pool.len(),
                            }
                            .into());
                        }
                        ShotSource::Resampled {
                            pool,
                            k,
                            seed: cfg.shots.seed,
                        }
                    } else {
                        ShotSource::Fixed(prompt::select_shots(&pool, k, cfg.shots.seed)?)
                    }
                }
            };
            shots.insert(d.name, source);
        }

        let mut gateways = BTreeMap::new();
        for m in &cfg.models {
            gateways.insert(m.model_id.clone(), Arc::new(Gateway::new(m.clone())?));
        }

        let plan = plan::expand(&cfg, &plan_samples);
        Ok(Experiment {
            cfg,
            samples,
            sample_index,
            ocr,
            shots,
            gateways,
            plan,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &RunPlan {
        &self.plan
    }

    pub fn samples(&self, d: Dataset) -> &[Sample] {
        self.samples.get(&d).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn sample(&self, d: Dataset, sample_id: &str) -> Option<&Sample> {
        let i = *self.sample_index.get(&(d, sample_id.to_string()))?;
        self.samples.get(&d)?.get(i)
    }

    /// Replaces the gateway for `model_id`, e.g. with an instrumented backend.
    pub fn replace_gateway(&mut self, model_id: &str, gateway: Gateway) -> bool {
        match self.gateways.get_mut(model_id) {
            Some(slot) => {
                *slot = Arc::new(gateway);
                true
            }
            None => false,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.cfg.output_path()
    }
}

/// Expands a config into its run plan.
pub fn plan_runs(cfg: &ExperimentConfig) -> Result<RunPlan, RunError> {
    Ok(Experiment::load(cfg.clone())?.plan)
}

/// Loads, executes and reports in one go.
pub fn run_experiment(cfg: ExperimentConfig) -> Result<(RunOutcome, ReportBundle), RunError> {
    let exp = Experiment::load(cfg)?;
    let outcome = exp.execute(&ExecuteOptions::default())?;
    let bundle = exp.report(&outcome)?;
    Ok((outcome, bundle))
}

pub(crate) fn sort_records(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| a.trial_key().cmp(&b.trial_key()));
}
