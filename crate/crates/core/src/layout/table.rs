use super::lines::{join_texts, Line};
use super::SerializerOptions;
use crate::ocr::OcrToken;

/// A run of lines whose wide gaps line up into columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TableModel {
    pub rows: Vec<Line>,
    /// Ascending x-coordinates; column `c` spans `column_bounds[c]..column_bounds[c + 1]`.
    pub column_bounds: Vec<f64>,
    /// rows × columns, empty string for vacant cells.
    pub cells: Vec<Vec<String>>,
}

impl TableModel {
    pub fn column_count(&self) -> usize {
        self.column_bounds.len().saturating_sub(1)
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }
}

/// Output unit of the layout pass: either a table or a plain line.
#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Table(TableModel),
    Line(Line),
}

/// Horizontal run of tokens between two wide gaps.
#[derive(Debug, Clone)]
struct Segment<'a> {
    left: f64,
    right: f64,
    tokens: Vec<&'a OcrToken>,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len().is_multiple_of(2) {
        (values[mid - 1] + values[mid]) / 2.0
    } else {
        values[mid]
    })
}

/// Typical word spacing: the median gap between neighbouring tokens of a line,
/// clamped to [0.25, 1] × the median token height. The upper clamp keeps pages
/// where every gap is a column gap (pure grids) from treating those gaps as
/// ordinary spacing.
fn gap_unit(lines: &[Line]) -> Option<f64> {
    let mut gaps = Vec::new();
    let mut heights = Vec::new();
    for line in lines {
        let mut reach = f64::NEG_INFINITY;
        for (i, t) in line.tokens.iter().enumerate() {
            let b = t.bbox();
            heights.push(b.height());
            if i > 0 {
                gaps.push((b.left - reach).max(0.0));
            }
            reach = reach.max(b.right);
        }
    }
    let gap = median(&mut gaps)?;
    let height = median(&mut heights)?;
    Some(gap.clamp(0.25 * height, height))
}

fn segments(line: &Line, wide_gap: f64) -> Vec<Segment<'_>> {
    let mut out: Vec<Segment<'_>> = Vec::new();
    for t in &line.tokens {
        let b = t.bbox();
        match out.last_mut() {
            Some(seg) if b.left - seg.right <= wide_gap => {
                seg.right = seg.right.max(b.right);
                seg.tokens.push(t);
            }
            _ => out.push(Segment {
                left: b.left,
                right: b.right,
                tokens: vec![t],
            }),
        }
    }
    out
}

struct Builder<'a> {
    rows: Vec<(&'a Line, Vec<Segment<'a>>, Vec<usize>)>,
    columns: Vec<(f64, f64)>,
}

impl<'a> Builder<'a> {
    fn start(line: &'a Line, segs: Vec<Segment<'a>>) -> Self {
        let columns = segs.iter().map(|s| (s.left, s.right)).collect();
        let slots = (0..segs.len()).collect();
        Builder {
            rows: vec![(line, segs, slots)],
            columns,
        }
    }

    /// Adds the row if every segment lands in exactly one distinct column and the
    /// widened columns stay disjoint.
    fn try_push(
        &mut self,
        line: &'a Line,
        segs: Vec<Segment<'a>>,
        tol: f64,
    ) -> Result<(), Vec<Segment<'a>>> {
        let mut slots = Vec::with_capacity(segs.len());
        for s in &segs {
            let hits: Vec<usize> = self
                .columns
                .iter()
                .enumerate()
                .filter(|(_, &(l, r))| s.left <= r + tol && s.right >= l - tol)
                .map(|(c, _)| c)
                .collect();
            match hits.as_slice() {
                [c] if slots.last().is_none_or(|&prev| prev < *c) => slots.push(*c),
                _ => return Err(segs),
            }
        }
        let mut widened = self.columns.clone();
        for (s, &c) in segs.iter().zip(&slots) {
            widened[c].0 = widened[c].0.min(s.left);
            widened[c].1 = widened[c].1.max(s.right);
        }
        if widened.windows(2).any(|w| w[0].1 >= w[1].0) {
            return Err(segs);
        }
        self.columns = widened;
        self.rows.push((line, segs, slots));
        Ok(())
    }

    fn finish(self, opts: &SerializerOptions, out: &mut Vec<Block>) {
        let ncols = self.columns.len();
        if self.rows.len() < opts.table_min_rows || ncols < opts.table_min_cols {
            out.extend(
                self.rows
                    .into_iter()
                    .map(|(l, _, _)| Block::Line(l.clone())),
            );
            return;
        }
        let mut bounds = Vec::with_capacity(ncols + 1);
        bounds.push(self.columns[0].0);
        for w in self.columns.windows(2) {
            bounds.push((w[0].1 + w[1].0) / 2.0);
        }
        bounds.push(self.columns[ncols - 1].1);

        let mut rows = Vec::with_capacity(self.rows.len());
        let mut cells = Vec::with_capacity(self.rows.len());
        for (line, segs, slots) in self.rows {
            let mut row = vec![String::new(); ncols];
            for (seg, c) in segs.into_iter().zip(slots) {
                row[c] = join_texts(seg.tokens);
            }
            rows.push(line.clone());
            cells.push(row);
        }
        out.push(Block::Table(TableModel {
            rows,
            column_bounds: bounds,
            cells,
        }));
    }
}

/// Splits lines into tables and plain lines, preserving top-to-bottom order.
///
/// A line is a row candidate when its wide gaps (wider than
/// `column_gap_factor` × the typical word spacing) cut it into two or more
/// segments. The first row of a run fixes the columns; each following
/// candidate joins the run when its segments align with those columns.
pub fn layout_blocks(lines: &[Line], opts: &SerializerOptions) -> Vec<Block> {
    let mut out = Vec::new();
    let Some(unit) = gap_unit(lines) else {
        out.extend(lines.iter().cloned().map(Block::Line));
        return out;
    };
    let wide_gap = opts.column_gap_factor * unit;
    let tol = unit;

    let mut current: Option<Builder<'_>> = None;
    for line in lines {
        let segs = segments(line, wide_gap);
        if segs.len() < 2 {
            if let Some(b) = current.take() {
                b.finish(opts, &mut out);
            }
            out.push(Block::Line(line.clone()));
            continue;
        }
        current = match current.take() {
            None => Some(Builder::start(line, segs)),
            Some(mut b) => match b.try_push(line, segs, tol) {
                Ok(()) => Some(b),
                Err(segs) => {
                    b.finish(opts, &mut out);
                    Some(Builder::start(line, segs))
                }
            },
        };
    }
    if let Some(b) = current {
        b.finish(opts, &mut out);
    }
    out
}

/// First table in the lines, if any.
pub fn detect_table(lines: &[Line], opts: &SerializerOptions) -> Option<TableModel> {
    layout_blocks(lines, opts)
        .into_iter()
        .find_map(|b| match b {
            Block::Table(t) => Some(t),
            Block::Line(_) => None,
        })
}
