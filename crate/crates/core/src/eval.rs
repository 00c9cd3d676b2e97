//! Containment accuracy.
//!
//! A prediction counts as correct when some normalized reference answer occurs
//! inside the normalized prediction. Normalization:
//!
//! 1. NFKC compatibility folding, then lowercasing;
//! 2. whitespace runs collapse to one space, ends are trimmed;
//! 3. the characters `.,!?;:'"()[]` are stripped where they touch a space or
//!    either end of the string. Interior punctuation (`275,000`, `a.b`) stays.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::dataset::Dataset;
use crate::gateway::PromptHash;
use crate::ocr::OcrSource;

/// Tag written into every report so accuracies can be compared across versions.
pub const NORMALIZATION_VERSION: &str = "containment-v1";

const EDGE_PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"', '(', ')', '[', ']'];

pub fn normalize(text: &str) -> String {
    let folded: String = text
        .nfkc()
        .collect::<String>()
        .to_lowercase()
        .nfkc()
        .collect();
    let mut out = String::with_capacity(folded.len());
    for word in folded.split_whitespace() {
        let word = word.trim_matches(EDGE_PUNCTUATION);
        if word.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Plain substring containment.
    #[default]
    Substring,
    /// The answer must start and end on word boundaries of the prediction.
    WordBoundary,
}

pub fn is_correct(prediction: &str, answers: &[String]) -> bool {
    is_correct_with(prediction, answers, MatchMode::Substring)
}

pub fn is_correct_with(prediction: &str, answers: &[String], mode: MatchMode) -> bool {
    let pred = normalize(prediction);
    answers.iter().any(|a| {
        let ans = normalize(a);
        !ans.is_empty()
            && match mode {
                MatchMode::Substring => pred.contains(&ans),
                MatchMode::WordBoundary => contains_word_bounded(&pred, &ans),
            }
    })
}

fn contains_word_bounded(haystack: &str, needle: &str) -> bool {
    let is_word = |c: char| c.is_alphanumeric();
    haystack.match_indices(needle).any(|(start, m)| {
        let before = haystack[..start].chars().next_back();
        let after = haystack[start + m.len()..].chars().next();
        before.is_none_or(|c| !is_word(c)) && after.is_none_or(|c| !is_word(c))
    })
}

/// One scored trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub dataset: Dataset,
    pub model_id: String,
    /// Name of the OCR source in the experiment config (e.g. `paddleocr`).
    pub ocr_name: String,
    pub ocr_source: OcrSource,
    pub prediction: String,
    pub correct: bool,
    pub prompt_hash: PromptHash,
    pub latency_ms: u64,
}

impl EvalRecord {
    pub fn trial_key(&self) -> (Dataset, &str, &str, &str) {
        (
            self.dataset,
            self.sample_id.as_str(),
            self.model_id.as_str(),
            self.ocr_name.as_str(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub dataset: Dataset,
    pub model_id: String,
    pub ocr_name: String,
    pub ocr_source: OcrSource,
    pub n: usize,
    pub n_correct: usize,
    pub accuracy: f64,
}

impl Metrics {
    /// Accuracy to four decimals, e.g. `0.6600`.
    pub fn accuracy_str(&self) -> String {
        format_accuracy(self.n_correct, self.n)
    }

    /// Row label in the accuracy grid: `<ocr>+<model>`.
    pub fn method(&self) -> String {
        format!("{}+{}", self.ocr_name, self.model_id)
    }
}

/// Four-decimal rendering of `correct / n`.
pub fn format_accuracy(correct: usize, n: usize) -> String {
    // Integer rounding (half up) avoids binary floating-point surprises at the
    // fifth decimal.
    let scaled = (correct as u128 * 20_000 + n as u128) / (2 * n as u128);
    format!("{}.{:04}", scaled / 10_000, scaled % 10_000)
}

/// One row per distinct (dataset, model, OCR source), sorted by that key.
pub fn aggregate(records: &[EvalRecord]) -> Vec<Metrics> {
    let mut groups: BTreeMap<(Dataset, &str, &str, OcrSource), (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = groups
            .entry((r.dataset, &r.model_id, &r.ocr_name, r.ocr_source))
            .or_default();
        e.0 += 1;
        e.1 += usize::from(r.correct);
    }
    groups
        .into_iter()
        .map(|((dataset, model, ocr, source), (n, n_correct))| Metrics {
            dataset,
            model_id: model.to_string(),
            ocr_name: ocr.to_string(),
            ocr_source: source,
            n,
            n_correct,
            accuracy: n_correct as f64 / n as f64,
        })
        .collect()
}
