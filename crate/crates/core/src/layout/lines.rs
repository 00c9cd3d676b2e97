use std::cmp::Ordering;

use crate::ocr::{BBox, OcrToken};

/// Tokens that share a horizontal band of the page.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    /// Sorted by left edge, then top edge, then input order.
    pub tokens: Vec<OcrToken>,
    /// (top, bottom) covering every member box.
    pub y_band: (f64, f64),
}

impl Line {
    /// Tokens in reading order.
    ///
    /// Left-to-right, except that a token never precedes one lying entirely above
    /// it. The two orders only differ when transitive grouping chains together
    /// tokens whose own bands are disjoint.
    pub fn reading_order(&self) -> Vec<&OcrToken> {
        let boxes: Vec<BBox> = self.tokens.iter().map(OcrToken::bbox).collect();
        let n = boxes.len();
        let mut placed = vec![false; n];
        let mut order = Vec::with_capacity(n);
        for _ in 0..n {
            // `tokens` is already in left-edge order, so the first ready token wins.
            let next = (0..n)
                .find(|&i| {
                    !placed[i]
                        && (0..n).all(|j| placed[j] || j == i || boxes[j].bottom > boxes[i].top)
                })
                .expect("strictly-above is acyclic");
            placed[next] = true;
            order.push(&self.tokens[next]);
        }
        order
    }

    pub fn text(&self) -> String {
        join_texts(self.reading_order())
    }

    pub fn left(&self) -> f64 {
        self.tokens
            .iter()
            .map(|t| t.bbox().left)
            .fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn join_texts<'a>(tokens: impl IntoIterator<Item = &'a OcrToken>) -> String {
    let mut out = String::new();
    for t in tokens {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(t.text.trim());
    }
    out
}

/// Whether two boxes overlap vertically by at least `threshold` of the shorter
/// height. Boxes that merely touch never share a band.
pub fn shares_band(a: &BBox, b: &BBox, threshold: f64) -> bool {
    let overlap = a.vertical_overlap(b);
    overlap > 0.0 && overlap >= threshold * a.height().min(b.height())
}

/// Geometry-first ordering used within a line. Everything past left/top only
/// matters for tokens that share both edges.
fn token_order(a: &(usize, &OcrToken, BBox), b: &(usize, &OcrToken, BBox)) -> Ordering {
    let (ia, ta, ba) = a;
    let (ib, tb, bb) = b;
    ba.left
        .total_cmp(&bb.left)
        .then(ba.top.total_cmp(&bb.top))
        .then(ba.right.total_cmp(&bb.right))
        .then(ba.bottom.total_cmp(&bb.bottom))
        .then_with(|| ta.text.cmp(&tb.text))
        .then(ia.cmp(ib))
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Groups tokens into lines: two tokens share a line when their vertical overlap
/// is at least `threshold × min(height)`, closed transitively. Lines come out
/// top-to-bottom.
pub fn group_lines(tokens: &[OcrToken], threshold: f64) -> Vec<Line> {
    let boxes: Vec<BBox> = tokens.iter().map(OcrToken::bbox).collect();
    let mut sets = DisjointSet::new(tokens.len());

    // Sweep by top edge: once a box starts below the current box's bottom, no
    // later box can overlap it either.
    let mut by_top: Vec<usize> = (0..tokens.len()).collect();
    by_top.sort_by(|&a, &b| boxes[a].top.total_cmp(&boxes[b].top));
    for (pos, &i) in by_top.iter().enumerate() {
        for &j in &by_top[pos + 1..] {
            if boxes[j].top >= boxes[i].bottom {
                break;
            }
            if shares_band(&boxes[i], &boxes[j], threshold) {
                sets.union(i, j);
            }
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; tokens.len()];
    for i in 0..tokens.len() {
        let root = sets.find(i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }

    let mut lines: Vec<Line> = groups
        .into_iter()
        .map(|members| {
            let mut keyed: Vec<(usize, &OcrToken, BBox)> =
                members.iter().map(|&i| (i, &tokens[i], boxes[i])).collect();
            keyed.sort_by(token_order);
            let top = keyed.iter().map(|k| k.2.top).fold(f64::INFINITY, f64::min);
            let bottom = keyed
                .iter()
                .map(|k| k.2.bottom)
                .fold(f64::NEG_INFINITY, f64::max);
            Line {
                tokens: keyed.into_iter().map(|(_, t, _)| t.clone()).collect(),
                y_band: (top, bottom),
            }
        })
        .collect();
    // Two lines never share a top edge (equal tops always overlap), so the
    // remaining keys only make the sort total.
    lines.sort_by(|a, b| {
        a.y_band
            .0
            .total_cmp(&b.y_band.0)
            .then(a.left().total_cmp(&b.left()))
            .then(a.y_band.1.total_cmp(&b.y_band.1))
    });
    lines
}
