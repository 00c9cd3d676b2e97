use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::dataset::Dataset;
use crate::eval::EvalRecord;

/// Identity of one trial: which sample, through which OCR source, to which model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialSpec {
    pub dataset: Dataset,
    pub sample_id: String,
    pub model_id: String,
    pub ocr_source: String,
}

impl TrialSpec {
    pub fn of_record(r: &EvalRecord) -> Self {
        TrialSpec {
            dataset: r.dataset,
            sample_id: r.sample_id.clone(),
            model_id: r.model_id.clone(),
            ocr_source: r.ocr_name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPlan {
    pub trials: Vec<TrialSpec>,
    /// Hex SHA-256 over the result-relevant config and the trial list.
    pub plan_hash: String,
}

impl RunPlan {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Number of distinct (dataset, model) pairs.
    pub fn cell_count(&self) -> usize {
        let mut cells: Vec<(Dataset, &str)> = self
            .trials
            .iter()
            .map(|t| (t.dataset, t.model_id.as_str()))
            .collect();
        cells.sort_unstable();
        cells.dedup();
        cells.len()
    }
}

/// Config fields that can change a result. Output location, concurrency,
/// caching and retry/rate settings are left out so a run can be resumed under
/// different operational settings.
#[derive(Serialize)]
struct PlanIdentity<'a> {
    datasets: &'a [super::config::DatasetConfig],
    models: Vec<ModelIdentity<'a>>,
    ocr_sources: &'a [super::config::OcrSourceConfig],
    shots: &'a super::config::ShotPolicy,
    subset: &'a Option<super::config::SubsetConfig>,
    match_mode: crate::eval::MatchMode,
    min_confidence: f64,
    normalization: &'static str,
    trials: &'a [TrialSpec],
}

#[derive(Serialize)]
struct ModelIdentity<'a> {
    model_id: &'a str,
    endpoint_url: &'a str,
    temperature: f64,
    max_output_tokens: usize,
    context_tokens: usize,
    chars_per_token: f64,
}

/// Expands datasets × samples × models × OCR sources, in config order.
pub(crate) fn expand(cfg: &ExperimentConfig, samples: &[(Dataset, Vec<String>)]) -> RunPlan {
    let mut trials = Vec::new();
    for (dataset, ids) in samples {
        for id in ids {
            for m in &cfg.models {
                for s in &cfg.ocr_sources {
                    trials.push(TrialSpec {
                        dataset: *dataset,
                        sample_id: id.clone(),
                        model_id: m.model_id.clone(),
                        ocr_source: s.name.clone(),
                    });
                }
            }
        }
    }
    let identity = PlanIdentity {
        datasets: &cfg.datasets,
        models: cfg
            .models
            .iter()
            .map(|m| ModelIdentity {
                model_id: &m.model_id,
                endpoint_url: &m.endpoint_url,
                temperature: m.temperature,
                max_output_tokens: m.max_output_tokens,
                context_tokens: m.context_tokens,
                chars_per_token: m.chars_per_token,
            })
            .collect(),
        ocr_sources: &cfg.ocr_sources,
        shots: &cfg.shots,
        subset: &cfg.subset,
        match_mode: cfg.match_mode,
        min_confidence: cfg.min_confidence,
        normalization: crate::eval::NORMALIZATION_VERSION,
        trials: &trials,
    };
    let bytes = serde_json::to_vec(&identity).expect("plan identity serializes");
    RunPlan {
        trials,
        plan_hash: hex::encode(Sha256::digest(&bytes)),
    }
}
