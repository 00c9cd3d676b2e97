//! Fixtures and reference implementations shared by the integration tests.
//!
//! The oracles here are written from the scoring and grouping rules directly
//! and share no code with the library.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng;
use unicode_normalization::UnicodeNormalization;
use vqa_harness::dataset::Dataset;
use vqa_harness::gateway::{MockModel, ModelConfig};
use vqa_harness::ocr::{OcrDocument, OcrToken};
use vqa_harness::run::{DatasetConfig, ExperimentConfig, OcrSourceConfig};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn e2e_dir() -> PathBuf {
    fixtures().join("e2e")
}

/// The bundled 10-sample experiment (5 DocVQA, 5 TextVQA) with one mock model.
pub fn e2e_config(out: &Path, mock: MockModel) -> ExperimentConfig {
    ExperimentConfig::new(
        out,
        vec![
            DatasetConfig::new(Dataset::Docvqa, "docvqa"),
            DatasetConfig::new(Dataset::Textvqa, "textvqa"),
        ],
        vec![ModelConfig::mock("vicuna-13b", mock)],
        vec![OcrSourceConfig::new("paddleocr", "ocr.jsonl")],
    )
    .with_base_dir(e2e_dir())
}

/// TextVQA only, read through a misreading engine with and without corrections.
pub fn override_config(out: &Path) -> ExperimentConfig {
    let mut corrected = OcrSourceConfig::new("groundtruth", "ocr_misread.jsonl");
    corrected.corrections = Some("corrections.jsonl".into());
    ExperimentConfig::new(
        out,
        vec![DatasetConfig::new(Dataset::Textvqa, "textvqa")],
        vec![ModelConfig::mock("vicuna-13b", MockModel::EchoAnswer)],
        vec![
            OcrSourceConfig::new("paddleocr", "ocr_misread.jsonl"),
            corrected,
        ],
    )
    .with_base_dir(e2e_dir())
}

#[derive(Debug, serde::Deserialize)]
pub struct MetricPair {
    pub prediction: String,
    pub answers: Vec<String>,
    pub correct: bool,
}

pub fn metric_pairs() -> Vec<MetricPair> {
    let raw = std::fs::read_to_string(fixtures().join("metric_pairs.jsonl")).unwrap();
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const EDGE_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"', '(', ')', '[', ']'];

/// Character-scan normalization: fold, then walk the characters building words
/// and dropping edge punctuation by index arithmetic.
pub fn oracle_normalize(text: &str) -> String {
    let folded: String = text.nfkc().collect::<String>().to_lowercase();
    let chars: Vec<char> = folded.nfkc().collect();
    let mut words: Vec<String> = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let (mut a, mut b) = (start, i);
        while a < b && EDGE_PUNCT.contains(&chars[a]) {
            a += 1;
        }
        while b > a && EDGE_PUNCT.contains(&chars[b - 1]) {
            b -= 1;
        }
        if a < b {
            words.push(chars[a..b].iter().collect());
        }
    }
    words.join(" ")
}

/// Sliding-window containment over characters.
pub fn oracle_contains(haystack: &str, needle: &str) -> bool {
    let h: Vec<char> = haystack.chars().collect();
    let n: Vec<char> = needle.chars().collect();
    if n.is_empty() || n.len() > h.len() {
        return false;
    }
    (0..=h.len() - n.len()).any(|s| (0..n.len()).all(|k| h[s + k] == n[k]))
}

pub fn oracle_is_correct(prediction: &str, answers: &[String]) -> bool {
    let p = oracle_normalize(prediction);
    answers
        .iter()
        .any(|a| oracle_contains(&p, &oracle_normalize(a)))
}

/// Axis-aligned integer box `(left, top, right, bottom)`.
pub type IBox = (i64, i64, i64, i64);

fn overlaps(a: IBox, b: IBox, threshold: f64) -> bool {
    let overlap = a.3.min(b.3) - a.1.max(b.1);
    let min_h = (a.3 - a.1).min(b.3 - b.1);
    overlap > 0 && overlap as f64 >= threshold * min_h as f64
}

/// Every set partition of `0..n`, as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let max = prefix.iter().copied().max().map_or(0, |m| m + 1);
        for b in 0..=max {
            prefix.push(b);
            grow(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, &mut out);
    out
}

fn block_connected(members: &[usize], boxes: &[IBox], threshold: f64) -> bool {
    let mut reached = vec![members[0]];
    let mut frontier = vec![members[0]];
    while let Some(x) = frontier.pop() {
        for &y in members {
            if !reached.contains(&y) && overlaps(boxes[x], boxes[y], threshold) {
                reached.push(y);
                frontier.push(y);
            }
        }
    }
    reached.len() == members.len()
}

/// Searches all partitions for those where no overlapping pair is split and
/// every block is connected by overlaps. Returns all that qualify (the rule
/// admits exactly one).
pub fn oracle_partitions(boxes: &[IBox], threshold: f64) -> Vec<BTreeSet<BTreeSet<usize>>> {
    let n = boxes.len();
    let mut found = Vec::new();
    for rgs in set_partitions(n) {
        let blocks = rgs.iter().copied().max().map_or(0, |m| m + 1);
        let members: Vec<Vec<usize>> = (0..blocks)
            .map(|b| (0..n).filter(|&i| rgs[i] == b).collect())
            .collect();
        let split_pair = (0..n)
            .any(|i| (0..n).any(|j| rgs[i] != rgs[j] && overlaps(boxes[i], boxes[j], threshold)));
        if split_pair {
            continue;
        }
        if members.iter().all(|m| block_connected(m, boxes, threshold)) {
            found.push(
                members
                    .into_iter()
                    .map(|m| m.into_iter().collect())
                    .collect(),
            );
        }
    }
    found
}

/// Tokens named `t0`, `t1`, ... so lines can be mapped back to input indices.
pub fn indexed_tokens(boxes: &[IBox]) -> Vec<OcrToken> {
    boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            OcrToken::boxed(
                format!("t{i}"),
                b.0 as f64,
                b.1 as f64,
                b.2 as f64,
                b.3 as f64,
            )
        })
        .collect()
}

pub fn token_index(text: &str) -> usize {
    text.trim_start_matches('t').parse().unwrap()
}

pub fn doc_of(boxes: &[IBox]) -> OcrDocument {
    OcrDocument::new("generated", indexed_tokens(boxes))
}

/// A box with integer corners in `[0, 100]²` and positive area.
pub fn random_box(rng: &mut impl Rng) -> IBox {
    let l = rng.gen_range(0..100);
    let t = rng.gen_range(0..100);
    let r = rng.gen_range(l + 1..=100);
    let b = rng.gen_range(t + 1..=100);
    (l, t, r, b)
}

/// Compares `group_lines` with the partition oracle on `cases` random documents
/// of 1 to 6 tokens. Returns the number of disagreements and the first one.
pub fn reading_order_sweep(cases: usize, seed: u64) -> (usize, Option<String>) {
    use rand::SeedableRng;
    use vqa_harness::layout::group_lines;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut first = None;
    for case in 0..cases {
        let n = 1 + case % 6;
        let boxes: Vec<IBox> = (0..n).map(|_| random_box(&mut rng)).collect();
        let lines = group_lines(&indexed_tokens(&boxes), 0.5);
        let got: BTreeSet<BTreeSet<usize>> = lines
            .iter()
            .map(|l| l.tokens.iter().map(|t| token_index(&t.text)).collect())
            .collect();
        let expected = oracle_partitions(&boxes, 0.5);
        let tops_sorted = lines.windows(2).all(|w| w[0].y_band.0 <= w[1].y_band.0);
        let lefts_sorted = lines.iter().all(|l| {
            l.tokens
                .windows(2)
                .all(|w| w[0].bbox().left <= w[1].bbox().left)
        });
        let ok = expected.len() == 1 && expected[0] == got && got.len() == lines.len();
        if !(ok && tops_sorted && lefts_sorted) {
            failures += 1;
            first.get_or_insert_with(|| format!("{boxes:?}: got {got:?}, oracle {expected:?}"));
        }
    }
    (failures, first)
}

fn emitted_order(output: &str) -> Vec<usize> {
    output
        .split(|c: char| c.is_whitespace() || c == '|')
        .filter(|w| w.starts_with('t') && w.len() > 1)
        .map(token_index)
        .collect()
}

fn vertically_before(a: IBox, b: IBox) -> bool {
    a.3 <= b.1
}

/// Checks permutation invariance, totality and vertical monotonicity of the
/// serializer on `docs` random documents. Returns the violation count and the
/// first violation.
pub fn serializer_sweep(docs: usize, seed: u64) -> (usize, Option<String>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use vqa_harness::layout::{serialize, SerializerOptions};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut first = None;
    let mut flag = |what: &str, boxes: &[IBox], first: &mut Option<String>| {
        violations += 1;
        first.get_or_insert_with(|| format!("{what}: {boxes:?}"));
    };
    for case in 0..docs {
        let n = 1 + case % 10;
        let mut boxes: Vec<IBox> = Vec::with_capacity(n);
        while boxes.len() < n {
            let b = random_box(&mut rng);
            if !boxes.contains(&b) {
                boxes.push(b);
            }
        }
        let doc = doc_of(&boxes);
        for opts in [SerializerOptions::plain(), SerializerOptions::markdown()] {
            let out = serialize(&doc, &opts);

            let mut shuffled = doc.clone();
            shuffled.tokens.shuffle(&mut rng);
            if serialize(&shuffled, &opts) != out {
                flag("permutation", &boxes, &mut first);
            }

            let order = emitted_order(&out);
            let mut seen = order.clone();
            seen.sort_unstable();
            if seen != (0..n).collect::<Vec<_>>() {
                flag("totality", &boxes, &mut first);
            }

            if opts == SerializerOptions::plain() {
                let pos: Vec<usize> = (0..n)
                    .map(|i| order.iter().position(|&j| j == i).unwrap_or(usize::MAX))
                    .collect();
                let broken = (0..n).any(|a| {
                    (0..n).any(|b| vertically_before(boxes[a], boxes[b]) && pos[a] > pos[b])
                });
                if broken {
                    flag("monotonicity", &boxes, &mut first);
                }
            }
        }
    }
    (violations, first)
}

/// Reference prompt wording, with the three slots filled in.
pub fn reference_prompt(
    template: vqa_harness::prompt::TemplateId,
    ocr: &str,
    question: &str,
    shots: &str,
) -> String {
    use vqa_harness::prompt::TemplateId;
    match template {
        TemplateId::Docvqa => format!(
            "There is a document image. The image can be formulated in the following Markdown format {ocr}. Please answer the question {question} following the examples {shots}"
        ),
        TemplateId::Generic => format!(
            "There is an image. You can see some texts on it. The other model tells you that these texts may be {ocr}. Please answer the question {question} following the examples {shots}"
        ),
    }
}
