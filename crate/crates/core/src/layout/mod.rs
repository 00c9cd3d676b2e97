//! Turns token geometry into readable text.
//!
//! Tokens are grouped into lines by vertical overlap, lines are scanned for
//! column structure, and the result is rendered either as Markdown (pipe
//! tables plus plain lines) or as flat text with one line per band.

mod lines;
mod table;

use serde::{Deserialize, Serialize};

use crate::ocr::OcrDocument;

pub use lines::{group_lines, shares_band, Line};
pub use table::{detect_table, layout_blocks, Block, TableModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SerializeMode {
    Markdown,
    Plain,
}

impl std::str::FromStr for SerializeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" => Ok(SerializeMode::Markdown),
            "plain" => Ok(SerializeMode::Plain),
            other => Err(format!("unknown serializer mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SerializerOptions {
    pub mode: SerializeMode,
    pub line_overlap_threshold: f64,
    pub column_gap_factor: f64,
    pub table_min_rows: usize,
    pub table_min_cols: usize,
}

impl Default for SerializerOptions {
    fn default() -> Self {
        SerializerOptions {
            mode: SerializeMode::Markdown,
            line_overlap_threshold: 0.5,
            column_gap_factor: 1.5,
            table_min_rows: 2,
            table_min_cols: 2,
        }
    }
}

impl SerializerOptions {
    pub fn plain() -> Self {
        SerializerOptions {
            mode: SerializeMode::Plain,
            ..Self::default()
        }
    }

    pub fn markdown() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.line_overlap_threshold > 0.0 && self.line_overlap_threshold <= 1.0) {
            return Err(format!(
                "line_overlap_threshold must be in (0, 1], got {}",
                self.line_overlap_threshold
            ));
        }
        if !(self.column_gap_factor > 0.0 && self.column_gap_factor.is_finite()) {
            return Err(format!(
                "column_gap_factor must be > 0, got {}",
                self.column_gap_factor
            ));
        }
        if self.table_min_rows < 2 || self.table_min_cols < 2 {
            return Err("table_min_rows and table_min_cols must be at least 2".into());
        }
        Ok(())
    }
}

fn escape_cell(text: &str) -> String {
    text.replace('|', "\\|")
}

fn push_table(out: &mut Vec<String>, table: &TableModel) {
    let row = |cells: &[String]| {
        let inner: Vec<String> = cells.iter().map(|c| escape_cell(c)).collect();
        format!("| {} |", inner.join(" | "))
    };
    let mut rows = table.cells.iter();
    if let Some(header) = rows.next() {
        out.push(row(header));
        out.push(format!(
            "|{}|",
            vec![" --- "; table.column_count()].join("|")
        ));
    }
    out.extend(rows.map(|r| row(r)));
}

/// Renders a document for the prompt.
///
/// ```
/// use vqa_harness::layout::{serialize, SerializerOptions};
/// use vqa_harness::ocr::{OcrDocument, OcrToken};
///
/// let doc = OcrDocument::new("sign", vec![
///     OcrToken::boxed("HERE", 50.0, 0.0, 90.0, 10.0),
///     OcrToken::boxed("STOP", 0.0, 0.0, 40.0, 10.0),
/// ]);
/// assert_eq!(serialize(&doc, &SerializerOptions::plain()), "STOP HERE");
/// ```
pub fn serialize(doc: &OcrDocument, opts: &SerializerOptions) -> String {
    let lines = group_lines(&doc.tokens, opts.line_overlap_threshold);
    let mut out: Vec<String> = Vec::with_capacity(lines.len());
    match opts.mode {
        SerializeMode::Plain => out.extend(lines.iter().map(Line::text)),
        SerializeMode::Markdown => {
            for block in layout_blocks(&lines, opts) {
                match block {
                    Block::Table(t) => push_table(&mut out, &t),
                    Block::Line(l) => out.push(l.text()),
                }
            }
        }
    }
    out.join("\n")
}
