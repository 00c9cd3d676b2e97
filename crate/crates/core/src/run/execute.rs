use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::log::{self, RunLogHeader, RUN_LOG_FORMAT};
use super::{Experiment, RunError, TrialSpec, ERRORS_FILE, RECORDS_FILE};
use crate::eval::{self, EvalRecord};
use crate::gateway::ResponseCache;
use crate::layout;
use crate::ocr::apply_override;
use crate::prompt::build_prompt;

#[derive(Debug, Clone, Default)]
pub struct ExecuteOptions {
    /// Run at most this many of the pending trials, then stop as if
    /// interrupted. The log is left resumable.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialError {
    pub trial: TrialSpec,
    pub message: String,
    #[serde(default)]
    pub prompt_hash: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    /// Every record of the plan completed so far, sorted by trial key.
    pub records: Vec<EvalRecord>,
    /// Trials that failed in this execution.
    pub errors: Vec<TrialError>,
    /// Trials attempted in this execution.
    pub executed: usize,
    /// Trials found already complete in the run log.
    pub resumed: usize,
    /// Trials of the plan still without a record.
    pub remaining: usize,
    /// RFC 3339 start time of this execution.
    pub started_at: Option<String>,
}

impl RunOutcome {
    pub fn is_complete(&self) -> bool {
        self.remaining == 0
    }
}

impl Experiment {
    fn header(&self) -> RunLogHeader {
        RunLogHeader {
            format: RUN_LOG_FORMAT.to_string(),
            plan_hash: self.plan.plan_hash.clone(),
            normalization: eval::NORMALIZATION_VERSION.to_string(),
            trials: self.plan.len(),
        }
    }

    /// Runs one trial end to end.
    #[allow(clippy::result_large_err)]
    pub fn run_trial(
        &self,
        trial: &TrialSpec,
        cache: Option<&ResponseCache>,
    ) -> Result<EvalRecord, TrialError> {
        let fail = |message: String, hash: Option<String>| TrialError {
            trial: trial.clone(),
            message,
            prompt_hash: hash,
        };
        let sample = self
            .sample(trial.dataset, &trial.sample_id)
            .ok_or_else(|| fail("sample not in plan".into(), None))?;
        let dcfg = self
            .cfg
            .dataset(trial.dataset)
            .ok_or_else(|| fail("dataset not configured".into(), None))?;
        let source = self
            .ocr
            .get(&trial.ocr_source)
            .ok_or_else(|| fail(format!("unknown OCR source `{}`", trial.ocr_source), None))?;
        let gateway = self
            .gateways
            .get(&trial.model_id)
            .ok_or_else(|| fail(format!("unknown model `{}`", trial.model_id), None))?;

        let doc = source
            .corpus
            .get(&sample.image_id)
            .cloned()
            .ok_or_else(|| {
                fail(
                    format!("no OCR document for image `{}`", sample.image_id),
                    None,
                )
            })?;
        let doc = match &source.corrections {
            Some(c) => apply_override(doc, c),
            None => doc,
        };
        let ocr_source = doc.source;
        let doc = doc.filter_confidence(self.cfg.min_confidence);
        let ocr_text = layout::serialize(&doc, &dcfg.serializer_options());

        let shots = self
            .shots
            .get(&trial.dataset)
            .ok_or_else(|| fail("no shot source".into(), None))?
            .for_sample(&sample.sample_id)
            .map_err(|e| fail(e.to_string(), None))?;
        let prompt = build_prompt(
            dcfg.template_id(),
            &ocr_text,
            &sample.question,
            &shots,
            gateway.config().char_budget(),
        )
        .map_err(|e| fail(e.to_string(), None))?;

        let answer = match cache {
            Some(c) => gateway.cached_complete(&prompt, c),
            None => gateway.complete(&prompt),
        }
        .map_err(|e| fail(e.to_string(), e.prompt_hash().map(|h| h.to_hex())))?;

        let correct = eval::is_correct_with(&answer.text, &sample.answers, self.cfg.match_mode);
        Ok(EvalRecord {
            sample_id: sample.sample_id.clone(),
            dataset: sample.dataset,
            model_id: trial.model_id.clone(),
            ocr_name: trial.ocr_source.clone(),
            ocr_source,
            prediction: answer.text,
            correct,
            prompt_hash: answer.prompt_hash,
            latency_ms: answer.latency.as_millis() as u64,
        })
    }

    /// Executes every trial that has no record in the output directory yet.
    ///
    /// Records are appended to the run log as they complete, from up to
    /// `max_in_flight` worker threads. Failed trials are logged to
    /// `errors.jsonl` and retried by the next execution. When this execution
    /// finishes the log is rewritten sorted by trial key.
    pub fn execute(&self, opts: &ExecuteOptions) -> Result<RunOutcome, RunError> {
        let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        let out_dir = self.output_dir();
        std::fs::create_dir_all(&out_dir).map_err(RunError::io(&out_dir))?;
        let log_path = out_dir.join(RECORDS_FILE);
        let header = self.header();

        let planned: HashSet<&TrialSpec> = self.plan.trials.iter().collect();
        let mut done: BTreeMap<TrialSpec, EvalRecord> = BTreeMap::new();
        if let Some(existing) = log::read_run_log(&log_path)? {
            if existing.header.plan_hash != header.plan_hash {
                return Err(RunError::PlanMismatch {
                    expected: header.plan_hash,
                    found: existing.header.plan_hash,
                });
            }
            for r in existing.records {
                let key = TrialSpec::of_record(&r);
                if planned.contains(&key) {
                    done.insert(key, r);
                }
            }
        }
        let resumed = done.len();
        // Rewrite so appends start from a clean line boundary.
        let existing: Vec<EvalRecord> = done.values().cloned().collect();
        log::write_run_log(&log_path, &header, &existing)?;

        let mut pending: Vec<&TrialSpec> = self
            .plan
            .trials
            .iter()
            .filter(|t| !done.contains_key(*t))
            .collect();
        if let Some(limit) = opts.stop_after {
            pending.truncate(limit);
        }

        let cache = if self.cfg.cache.enabled {
            let dir = self.cfg.cache_path();
            Some(ResponseCache::open(dir)?)
        } else {
            None
        };

        let file = OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(RunError::io(&log_path))?;
        let sink = Mutex::new(BufWriter::new(file));
        let new_records = Mutex::new(Vec::new());
        let errors = Mutex::new(Vec::new());
        let io_failure: Mutex<Option<std::io::Error>> = Mutex::new(None);
        let next = AtomicUsize::new(0);
        let workers = self.cfg.max_in_flight.min(pending.len()).max(1);

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(trial) = pending.get(i) else { break };
                    match self.run_trial(trial, cache.as_ref()) {
                        Ok(record) => {
                            let line = log::record_line(&record);
                            let mut w = sink.lock().unwrap();
                            if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                                io_failure.lock().unwrap().get_or_insert(e);
                                next.store(pending.len(), Ordering::Relaxed);
                                break;
                            }
                            drop(w);
                            new_records.lock().unwrap().push(record);
                        }
                        Err(e) => errors.lock().unwrap().push(e),
                    }
                });
            }
        });
        drop(sink);
        if let Some(e) = io_failure.into_inner().unwrap() {
            return Err(RunError::io(&log_path)(e));
        }

        for r in new_records.into_inner().unwrap() {
            done.insert(TrialSpec::of_record(&r), r);
        }
        let mut records: Vec<EvalRecord> = done.into_values().collect();
        super::sort_records(&mut records);
        log::write_run_log(&log_path, &header, &records)?;

        let mut errors = errors.into_inner().unwrap();
        errors.sort_by(|a, b| a.trial.cmp(&b.trial));
        write_errors(&out_dir.join(ERRORS_FILE), &errors)?;

        Ok(RunOutcome {
            remaining: self.plan.len() - records.len(),
            records,
            errors,
            executed: pending.len(),
            resumed,
            started_at: Some(started_at),
        })
    }
}

fn write_errors(path: &Path, errors: &[TrialError]) -> Result<(), RunError> {
    let mut body = String::new();
    for e in errors {
        body.push_str(&serde_json::to_string(e).expect("errors serialize"));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(RunError::io(path))
}
