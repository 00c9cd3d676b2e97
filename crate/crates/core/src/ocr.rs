//! Canonical OCR document schema and ingestion.
//!
//! Two on-disk shapes are accepted:
//!
//! * **canonical**: one JSON object per document,
//!   `{"image_id": str, "page_size": [w, h] | null, "tokens": [{"text", "quad", "conf"}]}`,
//!   stored one per line in a corpus file. A bare token array is also accepted
//!   for single-document input.
//! * **paddle-style**: a list of `[quad, [text, conf]]` pairs per image, and a
//!   corpus file that maps `image_id` to such a list.
//!
//! Every token is validated on the way in. Vertex order is normalized to
//! clockwise-from-top-left; nothing is ever dropped silently.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Slack, in pixels, allowed when checking tokens against the page bounds.
pub const PAGE_CLAMP_TOLERANCE: f64 = 2.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OcrError {
    #[error("malformed OCR input{}: {message}", location(*.line, None))]
    MalformedSyntax {
        line: Option<usize>,
        message: String,
    },
    #[error("schema violation{}: {message}", location(*.line, *.token))]
    SchemaViolation {
        line: Option<usize>,
        token: Option<usize>,
        message: String,
    },
}

fn location(line: Option<usize>, token: Option<usize>) -> String {
    match (line, token) {
        (Some(l), Some(t)) => format!(" at line {l}, token {t}"),
        (Some(l), None) => format!(" at line {l}"),
        (None, Some(t)) => format!(" at token {t}"),
        (None, None) => String::new(),
    }
}

impl OcrError {
    fn schema(token: Option<usize>, message: impl Into<String>) -> Self {
        OcrError::SchemaViolation {
            line: None,
            token,
            message: message.into(),
        }
    }

    fn at_line(self, line: usize) -> Self {
        match self {
            OcrError::MalformedSyntax { message, .. } => OcrError::MalformedSyntax {
                line: Some(line),
                message,
            },
            OcrError::SchemaViolation { token, message, .. } => OcrError::SchemaViolation {
                line: Some(line),
                token,
                message,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned box derived from a quad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    /// Length of the intersection of the two vertical extents (negative when disjoint).
    pub fn vertical_overlap(&self, other: &BBox) -> f64 {
        self.bottom.min(other.bottom) - self.top.max(other.top)
    }
}

/// Four vertices, clockwise from the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad(pub [Point; 4]);

impl Quad {
    /// Axis-aligned rectangle as a quad.
    pub fn rect(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Quad([
            Point::new(left, top),
            Point::new(right, top),
            Point::new(right, bottom),
            Point::new(left, bottom),
        ])
    }

    pub fn bbox(&self) -> BBox {
        let pts = &self.0;
        let mut b = BBox {
            left: pts[0].x,
            top: pts[0].y,
            right: pts[0].x,
            bottom: pts[0].y,
        };
        for p in &pts[1..] {
            b.left = b.left.min(p.x);
            b.right = b.right.max(p.x);
            b.top = b.top.min(p.y);
            b.bottom = b.bottom.max(p.y);
        }
        b
    }

    /// Reorders vertices by angle around the centroid so they run clockwise
    /// (image coordinates, y pointing down) starting from the top-left-most vertex.
    pub fn normalized(&self) -> Quad {
        let cx = self.0.iter().map(|p| p.x).sum::<f64>() / 4.0;
        let cy = self.0.iter().map(|p| p.y).sum::<f64>() / 4.0;
        let mut pts = self.0;
        pts.sort_by(|a, b| {
            let ta = (a.y - cy).atan2(a.x - cx);
            let tb = (b.y - cy).atan2(b.x - cx);
            ta.total_cmp(&tb)
        });
        let start = (0..4)
            .min_by(|&i, &j| {
                let (a, b) = (pts[i], pts[j]);
                (a.x + a.y)
                    .total_cmp(&(b.x + b.y))
                    .then(a.y.total_cmp(&b.y))
            })
            .unwrap_or(0);
        pts.rotate_left(start);
        Quad(pts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrToken {
    pub text: String,
    pub quad: Quad,
    #[serde(rename = "conf")]
    pub confidence: f64,
}

impl OcrToken {
    /// Builds a validated token; the quad is normalized to clockwise order.
    pub fn new(text: impl Into<String>, quad: Quad, confidence: f64) -> Result<Self, OcrError> {
        let token = OcrToken {
            text: text.into(),
            quad: quad.normalized(),
            confidence,
        };
        token.validate(None)?;
        Ok(token)
    }

    /// Convenience constructor for an axis-aligned box with full confidence.
    pub fn boxed(text: impl Into<String>, left: f64, top: f64, right: f64, bottom: f64) -> Self {
        OcrToken {
            text: text.into(),
            quad: Quad::rect(left, top, right, bottom),
            confidence: 1.0,
        }
    }

    pub fn bbox(&self) -> BBox {
        self.quad.bbox()
    }

    fn validate(&self, index: Option<usize>) -> Result<(), OcrError> {
        if self.text.trim().is_empty() {
            return Err(OcrError::schema(index, "token text is empty"));
        }
        for p in &self.quad.0 {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(OcrError::schema(index, "non-finite coordinate"));
            }
            if p.x < 0.0 || p.y < 0.0 {
                return Err(OcrError::schema(index, "negative coordinate"));
            }
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(OcrError::schema(
                index,
                format!("confidence {} outside [0, 1]", self.confidence),
            ));
        }
        let b = self.bbox();
        if b.width() <= 0.0 || b.height() <= 0.0 {
            return Err(OcrError::schema(
                index,
                "degenerate quad (zero width or height)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcrSource {
    ExternalFile,
    GroundtruthOverride,
}

impl fmt::Display for OcrSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OcrSource::ExternalFile => "external-file",
            OcrSource::GroundtruthOverride => "groundtruth-override",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcrFormat {
    Canonical,
    PaddleStyle,
}

impl FromStr for OcrFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(OcrFormat::Canonical),
            "paddle-style" | "paddle" => Ok(OcrFormat::PaddleStyle),
            other => Err(format!("unknown OCR format `{other}`")),
        }
    }
}

/// All recognized tokens of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct OcrDocument {
    pub image_id: String,
    pub tokens: Vec<OcrToken>,
    pub source: OcrSource,
    pub page_size: Option<(f64, f64)>,
}

impl OcrDocument {
    pub fn new(image_id: impl Into<String>, tokens: Vec<OcrToken>) -> Self {
        OcrDocument {
            image_id: image_id.into(),
            tokens,
            source: OcrSource::ExternalFile,
            page_size: None,
        }
    }

    /// Checks every token invariant and the page bounds. Tokens that stick out of
    /// the page by no more than [`PAGE_CLAMP_TOLERANCE`] are clamped onto it.
    pub fn validated(mut self) -> Result<Self, OcrError> {
        if self.image_id.trim().is_empty() {
            return Err(OcrError::schema(None, "image_id is empty"));
        }
        for (i, token) in self.tokens.iter_mut().enumerate() {
            token.quad = token.quad.normalized();
            token.validate(Some(i))?;
        }
        if let Some((w, h)) = self.page_size {
            if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
                return Err(OcrError::schema(None, "page_size must be positive"));
            }
            for (i, token) in self.tokens.iter_mut().enumerate() {
                for p in token.quad.0.iter_mut() {
                    if p.x > w + PAGE_CLAMP_TOLERANCE || p.y > h + PAGE_CLAMP_TOLERANCE {
                        return Err(OcrError::schema(
                            Some(i),
                            format!("vertex ({}, {}) outside page {w}x{h}", p.x, p.y),
                        ));
                    }
                    p.x = p.x.min(w);
                    p.y = p.y.min(h);
                }
                token.validate(Some(i))?;
            }
        }
        Ok(self)
    }

    /// Drops tokens whose confidence is below `threshold`. A threshold of 0 keeps everything.
    pub fn filter_confidence(mut self, threshold: f64) -> Self {
        if threshold > 0.0 {
            self.tokens.retain(|t| t.confidence >= threshold);
        }
        self
    }
}

#[derive(Serialize, Deserialize)]
struct CanonicalRecord {
    image_id: String,
    #[serde(default)]
    page_size: Option<[f64; 2]>,
    tokens: Vec<OcrToken>,
}

/// Serializes a document as one canonical JSON line (no trailing newline).
pub fn serialize_canonical(doc: &OcrDocument) -> String {
    let record = CanonicalRecord {
        image_id: doc.image_id.clone(),
        page_size: doc.page_size.map(|(w, h)| [w, h]),
        tokens: doc.tokens.clone(),
    };
    serde_json::to_string(&record).expect("OCR documents always serialize")
}

/// Parses one document. Token order of the source is preserved.
pub fn parse_ocr_document(
    raw: &[u8],
    image_id: &str,
    format: OcrFormat,
) -> Result<OcrDocument, OcrError> {
    let text = std::str::from_utf8(raw).map_err(|e| OcrError::MalformedSyntax {
        line: None,
        message: format!("input is not UTF-8: {e}"),
    })?;
    let value: Value = serde_json::from_str(text).map_err(|e| OcrError::MalformedSyntax {
        line: None,
        message: e.to_string(),
    })?;
    match format {
        OcrFormat::Canonical => canonical_from_value(&value, Some(image_id)),
        OcrFormat::PaddleStyle => paddle_from_value(&value, image_id),
    }
}

fn canonical_from_value(value: &Value, image_id: Option<&str>) -> Result<OcrDocument, OcrError> {
    let (id, page_size, tokens) = match value {
        Value::Array(items) => (None, None, items.as_slice()),
        Value::Object(map) => {
            let id = match map.get("image_id") {
                Some(Value::String(s)) => Some(s.as_str()),
                Some(_) => return Err(OcrError::schema(None, "image_id must be a string")),
                None => None,
            };
            let page_size = match map.get("page_size") {
                None | Some(Value::Null) => None,
                Some(v) => Some(pair(v).ok_or_else(|| {
                    OcrError::schema(None, "page_size must be [width, height] or null")
                })?),
            };
            let tokens = match map.get("tokens") {
                Some(Value::Array(items)) => items.as_slice(),
                Some(_) => return Err(OcrError::schema(None, "tokens must be an array")),
                None => return Err(OcrError::schema(None, "missing field `tokens`")),
            };
            (id, page_size, tokens)
        }
        _ => {
            return Err(OcrError::schema(
                None,
                "expected a document object or a token array",
            ))
        }
    };
    let image_id = match (image_id, id) {
        (Some(given), Some(found)) if given != found => {
            return Err(OcrError::schema(
                None,
                format!("image_id `{found}` does not match requested `{given}`"),
            ))
        }
        (Some(given), _) => given,
        (None, Some(found)) => found,
        (None, None) => return Err(OcrError::schema(None, "missing field `image_id`")),
    };
    let tokens = tokens
        .iter()
        .enumerate()
        .map(|(i, v)| canonical_token(i, v))
        .collect::<Result<Vec<_>, _>>()?;
    OcrDocument {
        image_id: image_id.to_string(),
        tokens,
        source: OcrSource::ExternalFile,
        page_size,
    }
    .validated()
}

fn canonical_token(index: usize, value: &Value) -> Result<OcrToken, OcrError> {
    let map = value
        .as_object()
        .ok_or_else(|| OcrError::schema(Some(index), "token must be an object"))?;
    let text = match map.get("text") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(OcrError::schema(Some(index), "text must be a string")),
        None => return Err(OcrError::schema(Some(index), "missing field `text`")),
    };
    let quad = quad_from_value(index, map.get("quad"))?;
    let confidence = match map.get("conf") {
        Some(v) => v
            .as_f64()
            .ok_or_else(|| OcrError::schema(Some(index), "conf must be a number"))?,
        None => return Err(OcrError::schema(Some(index), "missing field `conf`")),
    };
    Ok(OcrToken {
        text,
        quad,
        confidence,
    })
}

fn paddle_from_value(value: &Value, image_id: &str) -> Result<OcrDocument, OcrError> {
    let items = value
        .as_array()
        .ok_or_else(|| OcrError::schema(None, "expected a list of [quad, [text, conf]] pairs"))?;
    let tokens = items
        .iter()
        .enumerate()
        .map(|(i, v)| paddle_token(i, v))
        .collect::<Result<Vec<_>, _>>()?;
    OcrDocument::new(image_id, tokens).validated()
}

fn paddle_token(index: usize, value: &Value) -> Result<OcrToken, OcrError> {
    let bad = || OcrError::schema(Some(index), "expected [quad, [text, conf]]");
    let pair_items = value.as_array().filter(|a| a.len() == 2).ok_or_else(bad)?;
    let quad = quad_from_value(index, pair_items.first())?;
    let rec = pair_items[1]
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(bad)?;
    let text = rec[0]
        .as_str()
        .ok_or_else(|| OcrError::schema(Some(index), "text must be a string"))?;
    let confidence = rec[1]
        .as_f64()
        .ok_or_else(|| OcrError::schema(Some(index), "conf must be a number"))?;
    Ok(OcrToken {
        text: text.to_string(),
        quad,
        confidence,
    })
}

fn pair(value: &Value) -> Option<(f64, f64)> {
    match value.as_array()?.as_slice() {
        [a, b] => Some((a.as_f64()?, b.as_f64()?)),
        _ => None,
    }
}

fn quad_from_value(index: usize, value: Option<&Value>) -> Result<Quad, OcrError> {
    let items = match value {
        Some(Value::Array(items)) if items.len() == 4 => items,
        Some(_) => {
            return Err(OcrError::schema(
                Some(index),
                "quad must have exactly 4 points",
            ))
        }
        None => return Err(OcrError::schema(Some(index), "missing field `quad`")),
    };
    let mut pts = [Point::new(0.0, 0.0); 4];
    for (slot, item) in pts.iter_mut().zip(items) {
        let (x, y) =
            pair(item).ok_or_else(|| OcrError::schema(Some(index), "quad point must be [x, y]"))?;
        *slot = Point::new(x, y);
    }
    Ok(Quad(pts))
}

/// Documents of one OCR engine run, keyed by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OcrCorpus {
    docs: BTreeMap<String, OcrDocument>,
}

impl OcrCorpus {
    pub fn get(&self, image_id: &str) -> Option<&OcrDocument> {
        self.docs.get(image_id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn insert(&mut self, doc: OcrDocument) -> Option<OcrDocument> {
        self.docs.insert(doc.image_id.clone(), doc)
    }

    pub fn documents(&self) -> impl Iterator<Item = &OcrDocument> {
        self.docs.values()
    }

    /// Reads a canonical JSON-lines corpus. Blank lines are skipped; a repeated
    /// image id is a schema violation.
    pub fn read_canonical(reader: impl BufRead) -> Result<Self, OcrError> {
        let mut corpus = OcrCorpus::default();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| OcrError::MalformedSyntax {
                line: Some(lineno),
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let value: Value =
                serde_json::from_str(&line).map_err(|e| OcrError::MalformedSyntax {
                    line: Some(lineno),
                    message: e.to_string(),
                })?;
            if !value.is_object() {
                return Err(
                    OcrError::schema(None, "corpus line must be a document object").at_line(lineno),
                );
            }
            let doc = canonical_from_value(&value, None).map_err(|e| e.at_line(lineno))?;
            let id = doc.image_id.clone();
            if corpus.insert(doc).is_some() {
                return Err(
                    OcrError::schema(None, format!("duplicate image_id `{id}`")).at_line(lineno)
                );
            }
        }
        Ok(corpus)
    }

    /// Reads a paddle-style corpus: a JSON object mapping image id to its
    /// `[quad, [text, conf]]` list.
    pub fn read_paddle(raw: &[u8]) -> Result<Self, OcrError> {
        let value: Value = serde_json::from_slice(raw).map_err(|e| OcrError::MalformedSyntax {
            line: None,
            message: e.to_string(),
        })?;
        let map = value
            .as_object()
            .ok_or_else(|| OcrError::schema(None, "expected an object keyed by image_id"))?;
        let mut corpus = OcrCorpus::default();
        for (id, items) in map {
            let doc = paddle_from_value(items, id).map_err(|e| match e {
                OcrError::SchemaViolation { token, message, .. } => OcrError::SchemaViolation {
                    line: None,
                    token,
                    message: format!("image `{id}`: {message}"),
                },
                other => other,
            })?;
            corpus.insert(doc);
        }
        Ok(corpus)
    }

    pub fn read(raw: &[u8], format: OcrFormat) -> Result<Self, OcrError> {
        match format {
            OcrFormat::Canonical => Self::read_canonical(raw),
            OcrFormat::PaddleStyle => Self::read_paddle(raw),
        }
    }

    pub fn write_canonical(&self, mut out: impl Write) -> std::io::Result<()> {
        for doc in self.docs.values() {
            writeln!(out, "{}", serialize_canonical(doc))?;
        }
        Ok(())
    }
}

impl FromIterator<OcrDocument> for OcrCorpus {
    fn from_iter<I: IntoIterator<Item = OcrDocument>>(iter: I) -> Self {
        let mut corpus = OcrCorpus::default();
        for doc in iter {
            corpus.insert(doc);
        }
        corpus
    }
}

/// Manually corrected token lists, keyed by image id. Presence of a key means "replace".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OcrCorrectionSet {
    replacements: BTreeMap<String, Vec<OcrToken>>,
}

impl OcrCorrectionSet {
    pub fn insert(&mut self, image_id: impl Into<String>, tokens: Vec<OcrToken>) {
        self.replacements.insert(image_id.into(), tokens);
    }

    pub fn get(&self, image_id: &str) -> Option<&[OcrToken]> {
        self.replacements.get(image_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.replacements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replacements.is_empty()
    }

    /// Correction files share the canonical corpus schema.
    pub fn read(reader: impl BufRead) -> Result<Self, OcrError> {
        let corpus = OcrCorpus::read_canonical(reader)?;
        Ok(corpus
            .docs
            .into_iter()
            .map(|(id, doc)| (id, doc.tokens))
            .collect())
    }
}

impl FromIterator<(String, Vec<OcrToken>)> for OcrCorrectionSet {
    fn from_iter<I: IntoIterator<Item = (String, Vec<OcrToken>)>>(iter: I) -> Self {
        OcrCorrectionSet {
            replacements: iter.into_iter().collect(),
        }
    }
}

/// Swaps in corrected tokens when the set has an entry for this image.
pub fn apply_override(doc: OcrDocument, corrections: &OcrCorrectionSet) -> OcrDocument {
    match corrections.get(&doc.image_id) {
        Some(tokens) => OcrDocument {
            tokens: tokens.to_vec(),
            source: OcrSource::GroundtruthOverride,
            ..doc
        },
        None => doc,
    }
}
