//! Evaluation harness for text-rich visual question answering with
//! OCR-augmented language models.
//!
//! The pipeline reads recognized text from an OCR corpus, lays it out as
//! Markdown or plain text, wraps it in a few-shot prompt, sends that to a
//! chat-completion model and scores the reply by containment of a reference
//! answer.
//!
//! * [`ocr`]: OCR document schema, ingestion, ground-truth overrides
//! * [`layout`]: reading order, table detection, serialization
//! * [`prompt`]: templates and in-context shots
//! * [`gateway`]: model endpoints, mocks, retries, response cache
//! * [`dataset`]: DocVQA / OCRVQA / StVQA / TextVQA annotation loaders
//! * [`eval`]: normalization, containment accuracy, aggregation
//! * [`run`]: experiment configs, run plans, execution, reports

pub mod dataset;
pub mod eval;
pub mod gateway;
pub mod layout;
pub mod ocr;
pub mod prompt;
pub mod run;

// Guide chapters compiled as doctests so their snippets stay runnable.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ocr.md")]
    mod ocr {}
    #[doc = include_str!("../../../book/src/layout.md")]
    mod layout {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    mod prompts {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
