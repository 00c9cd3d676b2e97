//! Annotation loaders for the four benchmarks.
//!
//! | dataset | file looked up under the root | sample id | image id |
//! |---------|-------------------------------|-----------|----------|
//! | DocVQA  | `val_v1.0.json`               | `questionId` | stem of `image` |
//! | OCRVQA  | `dataset.json`                | `<image>-<n>` | the map key |
//! | StVQA   | `val_task_3.json`, `train_task_3.json` | `question_id` | `file_path` (or `file_name`) without extension |
//! | TextVQA | `TextVQA_0.5.1_val.json`      | `question_id` | `image_id` |
//!
//! `annotations.json` is accepted as a fallback name for all four, and the
//! root may also point directly at the annotation file.
//!
//! OCRVQA keeps only the validation split (`"split": 2`) unless told otherwise;
//! each of its questions pairs with the answer at the same position.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Docvqa,
    Ocrvqa,
    Stvqa,
    Textvqa,
}

impl Dataset {
    pub const ALL: [Dataset; 4] = [
        Dataset::Docvqa,
        Dataset::Ocrvqa,
        Dataset::Stvqa,
        Dataset::Textvqa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Docvqa => "docvqa",
            Dataset::Ocrvqa => "ocrvqa",
            Dataset::Stvqa => "stvqa",
            Dataset::Textvqa => "textvqa",
        }
    }

    /// Column heading used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Dataset::Docvqa => "DocVQA",
            Dataset::Ocrvqa => "OCRVQA",
            Dataset::Stvqa => "StVQA",
            Dataset::Textvqa => "TextVQA",
        }
    }

    pub fn annotation_candidates(self) -> &'static [&'static str] {
        match self {
            Dataset::Docvqa => &["val_v1.0.json", "annotations.json"],
            Dataset::Ocrvqa => &["dataset.json", "annotations.json"],
            Dataset::Stvqa => &["val_task_3.json", "train_task_3.json", "annotations.json"],
            Dataset::Textvqa => &["TextVQA_0.5.1_val.json", "annotations.json"],
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dataset::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown dataset `{s}`"))
    }
}

/// One question about one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub image_id: String,
    pub question: String,
    /// Reference answers, verbatim and in annotation order.
    pub answers: Vec<String>,
    pub dataset: Dataset,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub index: usize,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: {}", self.index, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("no annotation file for {dataset} under {}", .root.display())]
    MissingFile { dataset: Dataset, root: PathBuf },
    #[error("cannot read {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unrecognized {dataset} annotation format: {message}")]
    UnknownFormat { dataset: Dataset, message: String },
    #[error("{} invalid record(s); first: {}", .0.len(), .0[0])]
    InvalidRecords(Vec<RecordError>),
    #[error("subset size {n} out of range 1..={available}")]
    SubsetOutOfRange { n: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// OCRVQA split code to keep (1 train, 2 val, 3 test); `None` keeps all.
    pub ocrvqa_split: Option<u64>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            ocrvqa_split: Some(2),
        }
    }
}

/// Samples plus the records that failed validation.
#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub samples: Vec<Sample>,
    pub errors: Vec<RecordError>,
    /// Records seen, before any split filtering.
    pub records: usize,
}

pub fn resolve_annotation_file(root: &Path, dataset: Dataset) -> Result<PathBuf, DatasetError> {
    if root.is_file() {
        return Ok(root.to_path_buf());
    }
    dataset
        .annotation_candidates()
        .iter()
        .map(|name| root.join(name))
        .find(|p| p.is_file())
        .ok_or_else(|| DatasetError::MissingFile {
            dataset,
            root: root.to_path_buf(),
        })
}

/// Loads every sample, failing if any record is malformed.
pub fn load_dataset(path: &Path, dataset: Dataset) -> Result<Vec<Sample>, DatasetError> {
    load_dataset_with(path, dataset, LoadOptions::default())
}

pub fn load_dataset_with(
    path: &Path,
    dataset: Dataset,
    opts: LoadOptions,
) -> Result<Vec<Sample>, DatasetError> {
    let file = resolve_annotation_file(path, dataset)?;
    let raw = std::fs::read(&file).map_err(|source| DatasetError::Io {
        path: file.clone(),
        source,
    })?;
    let loaded = parse_annotations(&raw, dataset, opts)?;
    if loaded.errors.is_empty() {
        Ok(loaded.samples)
    } else {
        Err(DatasetError::InvalidRecords(loaded.errors))
    }
}

/// Parses an annotation file, collecting per-record errors instead of stopping.
pub fn parse_annotations(
    raw: &[u8],
    dataset: Dataset,
    opts: LoadOptions,
) -> Result<Loaded, DatasetError> {
    let unknown = |message: String| DatasetError::UnknownFormat { dataset, message };
    let value: Value = serde_json::from_slice(raw).map_err(|e| unknown(e.to_string()))?;
    let mut loaded = Loaded::default();
    match dataset {
        Dataset::Ocrvqa => {
            let map = value
                .as_object()
                .ok_or_else(|| unknown("expected an object keyed by image id".into()))?;
            for (index, (image_id, rec)) in map.iter().enumerate() {
                loaded.records += 1;
                match ocrvqa_record(image_id, rec, opts.ocrvqa_split) {
                    Ok(samples) => loaded.samples.extend(samples),
                    Err(message) => loaded.errors.push(RecordError { index, message }),
                }
            }
        }
        _ => {
            let data = value
                .get("data")
                .and_then(Value::as_array)
                .ok_or_else(|| unknown("missing `data` array".into()))?;
            for (index, rec) in data.iter().enumerate() {
                loaded.records += 1;
                match flat_record(dataset, rec) {
                    Ok(s) => loaded.samples.push(s),
                    Err(message) => loaded.errors.push(RecordError { index, message }),
                }
            }
        }
    }
    dedup_check(&mut loaded);
    Ok(loaded)
}

fn dedup_check(loaded: &mut Loaded) {
    let mut seen = HashSet::new();
    let mut keep = Vec::with_capacity(loaded.samples.len());
    for (index, s) in std::mem::take(&mut loaded.samples).into_iter().enumerate() {
        if seen.insert(s.sample_id.clone()) {
            keep.push(s);
        } else {
            loaded.errors.push(RecordError {
                index,
                message: format!("duplicate sample id `{}`", s.sample_id),
            });
        }
    }
    loaded.samples = keep;
}

fn id_string(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) if !s.trim().is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn string_field(rec: &Map<String, Value>, key: &str) -> Result<String, String> {
    match rec.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(format!("`{key}` is empty")),
        Some(_) => Err(format!("`{key}` must be a string")),
        None => Err(format!("missing `{key}`")),
    }
}

fn answers_field(rec: &Map<String, Value>) -> Result<Vec<String>, String> {
    let items = rec
        .get("answers")
        .and_then(Value::as_array)
        .ok_or("missing `answers` array")?;
    if items.is_empty() {
        return Err("`answers` is empty".into());
    }
    items
        .iter()
        .map(|a| match a {
            Value::String(s) if !s.trim().is_empty() => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err("every answer must be a non-empty string".to_string()),
        })
        .collect()
}

fn strip_extension(path: &str) -> String {
    let p = Path::new(path);
    match (p.parent(), p.file_stem()) {
        (Some(parent), Some(stem)) if !parent.as_os_str().is_empty() => {
            parent.join(stem).to_string_lossy().into_owned()
        }
        (_, Some(stem)) => stem.to_string_lossy().into_owned(),
        _ => path.to_string(),
    }
}

fn flat_record(dataset: Dataset, rec: &Value) -> Result<Sample, String> {
    let rec = rec.as_object().ok_or("record must be an object")?;
    let question = string_field(rec, "question")?;
    let answers = answers_field(rec)?;
    let (sample_id, image_id) = match dataset {
        Dataset::Docvqa => {
            let id = id_string(rec.get("questionId")).ok_or("missing `questionId`")?;
            let image = string_field(rec, "image")?;
            let stem = Path::new(&image)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or("`image` has no file name")?;
            (id, stem)
        }
        Dataset::Stvqa => {
            let id = id_string(rec.get("question_id")).ok_or("missing `question_id`")?;
            let path =
                string_field(rec, "file_path").or_else(|_| string_field(rec, "file_name"))?;
            (id, strip_extension(&path))
        }
        Dataset::Textvqa => {
            let id = id_string(rec.get("question_id")).ok_or("missing `question_id`")?;
            let image = id_string(rec.get("image_id")).ok_or("missing `image_id`")?;
            (id, image)
        }
        Dataset::Ocrvqa => unreachable!("OCRVQA records are keyed maps"),
    };
    Ok(Sample {
        sample_id,
        image_id,
        question,
        answers,
        dataset,
    })
}

fn ocrvqa_record(image_id: &str, rec: &Value, split: Option<u64>) -> Result<Vec<Sample>, String> {
    let rec = rec.as_object().ok_or("record must be an object")?;
    let questions = rec
        .get("questions")
        .and_then(Value::as_array)
        .ok_or("missing `questions` array")?;
    let answers = answers_field(rec)?;
    if questions.len() != answers.len() {
        return Err(format!(
            "{} questions but {} answers",
            questions.len(),
            answers.len()
        ));
    }
    if let (Some(want), Some(got)) = (split, rec.get("split").and_then(Value::as_u64)) {
        if want != got {
            return Ok(Vec::new());
        }
    }
    questions
        .iter()
        .zip(answers)
        .enumerate()
        .map(|(i, (q, a))| {
            let question = q
                .as_str()
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| format!("question {i} must be a non-empty string"))?;
            Ok(Sample {
                sample_id: format!("{image_id}-{i}"),
                image_id: image_id.to_string(),
                question: question.to_string(),
                answers: vec![a],
                dataset: Dataset::Ocrvqa,
            })
        })
        .collect()
}

/// Seeded draw of `n` distinct samples, returned in their original order.
pub fn sample_subset(samples: &[Sample], n: usize, seed: u64) -> Result<Vec<Sample>, DatasetError> {
    if n == 0 || n > samples.len() {
        return Err(DatasetError::SubsetOutOfRange {
            n,
            available: samples.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, samples.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| samples[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textvqa(records: &str) -> Loaded {
        let raw = format!(r#"{{"dataset_name":"textvqa","data":[{records}]}}"#);
        parse_annotations(raw.as_bytes(), Dataset::Textvqa, LoadOptions::default()).unwrap()
    }

    #[test]
    fn three_questions_two_images() {
        let raw = r#"{"data":[
            {"questionId":1,"question":"q1?","image":"documents/abc_1.png","answers":["x"]},
            {"questionId":2,"question":"q2?","image":"documents/abc_1.png","answers":["y"]},
            {"questionId":3,"question":"q3?","image":"documents/def_2.png","answers":["z"]}]}"#;
        let loaded =
            parse_annotations(raw.as_bytes(), Dataset::Docvqa, LoadOptions::default()).unwrap();
        assert_eq!(loaded.samples.len(), 3);
        let images: HashSet<_> = loaded.samples.iter().map(|s| s.image_id.as_str()).collect();
        assert_eq!(images, HashSet::from(["abc_1", "def_2"]));
    }

    #[test]
    fn empty_answers_is_a_record_error() {
        let loaded = textvqa(
            r#"{"question_id":1,"question":"a?","image_id":"i","answers":["a"]},
               {"question_id":2,"question":"b?","image_id":"i","answers":[]}"#,
        );
        assert_eq!(loaded.samples.len(), 1);
        assert_eq!(loaded.errors.len(), 1);
        assert_eq!(loaded.errors[0].index, 1);
    }

    #[test]
    fn ten_annotator_answers_are_kept() {
        let loaded = textvqa(
            r#"{"question_id":7,"question":"what brand?","image_id":"0054c91397f2fe05",
                "answers":["nokia","nokia","nokia","toshiba","nokia","nokia","nokia","nokia","nokia","nokia"]}"#,
        );
        assert_eq!(loaded.samples[0].answers.len(), 10);
        assert_eq!(loaded.samples[0].answers[3], "toshiba");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let loaded = textvqa(
            r#"{"question_id":1,"question":"a?","image_id":"i","answers":["a"]},
               {"question_id":1,"question":"b?","image_id":"i","answers":["b"]}"#,
        );
        assert_eq!(loaded.samples.len(), 1);
        assert_eq!(loaded.errors.len(), 1);
    }

    #[test]
    fn stvqa_keeps_directory_in_image_id() {
        let raw = r#"{"data":[{"question_id":5,"question":"q?","file_path":"coco-text/COCO_1.jpg",
            "file_name":"COCO_1.jpg","answers":["a","b"]}]}"#;
        let loaded =
            parse_annotations(raw.as_bytes(), Dataset::Stvqa, LoadOptions::default()).unwrap();
        assert_eq!(loaded.samples[0].image_id, "coco-text/COCO_1");
    }

    #[test]
    fn ocrvqa_expands_questions_and_filters_split() {
        let raw = r#"{
            "111":{"questions":["Who wrote this book?","Is this a comedy book?"],
                   "answers":["Jane Austen","No"],"split":2,"genre":"Literature"},
            "222":{"questions":["Who wrote this book?"],"answers":["X"],"split":1}}"#;
        let loaded =
            parse_annotations(raw.as_bytes(), Dataset::Ocrvqa, LoadOptions::default()).unwrap();
        assert_eq!(loaded.samples.len(), 2);
        assert_eq!(loaded.samples[1].sample_id, "111-1");
        assert_eq!(loaded.samples[1].answers, vec!["No"]);
        let all = parse_annotations(
            raw.as_bytes(),
            Dataset::Ocrvqa,
            LoadOptions { ocrvqa_split: None },
        )
        .unwrap();
        assert_eq!(all.samples.len(), 3);
    }

    #[test]
    fn unknown_format() {
        let err = parse_annotations(b"[1,2]", Dataset::Docvqa, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, DatasetError::UnknownFormat { .. }));
    }

    #[test]
    fn missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path(), Dataset::Textvqa).unwrap_err();
        assert!(matches!(err, DatasetError::MissingFile { .. }));
    }

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                sample_id: i.to_string(),
                image_id: format!("img{i}"),
                question: "q?".into(),
                answers: vec!["a".into()],
                dataset: Dataset::Textvqa,
            })
            .collect()
    }

    #[test]
    fn subset_edges() {
        let all = samples(80);
        assert_eq!(sample_subset(&all, 80, 3).unwrap(), all);
        let one = sample_subset(&all, 1, 3).unwrap();
        assert!(all.contains(&one[0]));
        let a = sample_subset(&all, 50, 0).unwrap();
        assert_eq!(a, sample_subset(&all, 50, 0).unwrap());
        let ids: Vec<usize> = a.iter().map(|s| s.sample_id.parse().unwrap()).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert!(sample_subset(&all, 0, 0).is_err());
        assert!(sample_subset(&all, 81, 0).is_err());
    }
}
