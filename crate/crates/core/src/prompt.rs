//! Few-shot prompt assembly.
//!
//! There are two instruction templates: one for document images, whose OCR
//! text arrives as Markdown, and one for everything else. Both end with the
//! question followed by the in-context examples.

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("cannot draw {k} shots from a pool of {pool}")]
    InsufficientPool { k: usize, pool: usize },
    #[error("prompt needs {required} chars before OCR text but the budget is {budget}")]
    BudgetInfeasible { required: usize, budget: usize },
    #[error("question is empty")]
    EmptyQuestion,
    #[error("shot {index}: question and answer must be non-empty")]
    InvalidShot { index: usize },
    #[error("shot pool {path}: {message}")]
    Pool { path: String, message: String },
}

/// One in-context question/answer pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub question: String,
    pub answer: String,
}

impl Shot {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Shot {
            question: question.into(),
            answer: answer.into(),
        }
    }
}

/// The three fixed in-context examples used by default.
pub fn default_shots() -> Vec<Shot> {
    vec![
        Shot::new(
            "How many conferences were held in the fall of 1968?",
            "According to the image, question and guidance, there are four conferences were held in the fall of 1968.",
        ),
        Shot::new(
            "What is the Email id of Karen D Mittleman, PhD?",
            "Based on the given image and guidance, the answer should be kmittle@dwrite.com.",
        ),
        // The escapes are literal text in the reference prompt.
        Shot::new(
            "What is the circulation of the journal \\u2018RN\\u2019?",
            "The answer is 275,000.",
        ),
    ]
}

/// Loads a `[{"question": .., "answer": ..}]` pool.
pub fn load_shot_pool(path: &Path) -> Result<Vec<Shot>, PromptError> {
    let err = |message: String| PromptError::Pool {
        path: path.display().to_string(),
        message,
    };
    let raw = std::fs::read(path).map_err(|e| err(e.to_string()))?;
    let shots: Vec<Shot> = serde_json::from_slice(&raw).map_err(|e| err(e.to_string()))?;
    for (index, s) in shots.iter().enumerate() {
        if s.question.trim().is_empty() || s.answer.trim().is_empty() {
            return Err(PromptError::InvalidShot { index });
        }
    }
    Ok(shots)
}

/// Draws `k` distinct shots without replacement, in draw order.
///
/// The generator is ChaCha8 seeded from `seed`, so a given `(pool, k, seed)`
/// picks the same shots on every platform.
pub fn select_shots(pool: &[Shot], k: usize, seed: u64) -> Result<Vec<Shot>, PromptError> {
    if k > pool.len() {
        return Err(PromptError::InsufficientPool {
            k,
            pool: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateId {
    Docvqa,
    Generic,
}

impl TemplateId {
    fn parts(self) -> (&'static str, &'static str, &'static str) {
        match self {
            TemplateId::Docvqa => (
                "There is a document image. The image can be formulated in the following Markdown format ",
                ". Please answer the question ",
                " following the examples ",
            ),
            TemplateId::Generic => (
                "There is an image. You can see some texts on it. The other model tells you that these texts may be ",
                ". Please answer the question ",
                " following the examples ",
            ),
        }
    }

    /// Instruction prefix that identifies the template inside a rendered prompt.
    pub fn preamble(self) -> &'static str {
        match self {
            TemplateId::Docvqa => "There is a document image.",
            TemplateId::Generic => "There is an image. You can see some texts on it.",
        }
    }
}

/// Fully assembled model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub template_id: TemplateId,
    pub rendered: String,
    pub shot_count: usize,
    /// Characters of OCR text retained after truncation.
    pub ocr_text_chars: usize,
    pub truncated: bool,
}

/// `Question: ..\nAnswer: ..` blocks, newline separated.
pub fn render_shots(shots: &[Shot]) -> String {
    shots
        .iter()
        .map(|s| format!("Question: {}\nAnswer: {}", s.question, s.answer))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Fills a template. OCR text is cut at its tail when the whole prompt would
/// exceed `char_budget` characters; nothing else is ever shortened.
pub fn build_prompt(
    template_id: TemplateId,
    ocr_text: &str,
    question: &str,
    shots: &[Shot],
    char_budget: usize,
) -> Result<Prompt, PromptError> {
    if question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    let (head, mid, tail) = template_id.parts();
    let shot_text = render_shots(shots);
    let fixed = [head, mid, question, tail, shot_text.as_str()]
        .iter()
        .map(|s| s.chars().count())
        .sum::<usize>();
    if fixed > char_budget {
        return Err(PromptError::BudgetInfeasible {
            required: fixed,
            budget: char_budget,
        });
    }
    let room = char_budget - fixed;
    let (kept, truncated) = match ocr_text.char_indices().nth(room) {
        Some((cut, _)) => (&ocr_text[..cut], true),
        None => (ocr_text, false),
    };
    let rendered = format!("{head}{kept}{mid}{question}{tail}{shot_text}");
    Ok(Prompt {
        template_id,
        rendered,
        shot_count: shots.len(),
        ocr_text_chars: kept.chars().count(),
        truncated,
    })
}

/// Character budget for a model context of `context_tokens`, leaving room for
/// `max_output_tokens` of reply at `chars_per_token` characters per token.
pub fn char_budget(context_tokens: usize, max_output_tokens: usize, chars_per_token: f64) -> usize {
    let tokens = context_tokens.saturating_sub(max_output_tokens);
    (tokens as f64 * chars_per_token).floor() as usize
}
