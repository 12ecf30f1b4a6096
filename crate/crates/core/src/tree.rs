//! Spans and unlabeled binary trees.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open token interval `[start, end)`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub const fn width(&self) -> usize {
        self.end - self.start
    }

    /// True for `(a,b)` vs `(c,d)` with `a<c<b<d` or `c<a<d<b`.
    pub fn crosses(&self, other: &Span) -> bool {
        let (a, b, c, d) = (self.start, self.end, other.start, other.end);
        (a < c && c < b && b < d) || (c < a && a < d && d < b)
    }

    /// `self` strictly contains `other`.
    pub fn strictly_contains(&self, other: &Span) -> bool {
        self != other && self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Width-1 spans and the whole sentence carry no bracketing information.
    pub fn is_trivial(&self, n: usize) -> bool {
        self.width() <= 1 || (self.start == 0 && self.end == n)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}

/// A full binary bracketing over `n_leaves` tokens, stored as the split point
/// of every internal span.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryTree {
    n_leaves: usize,
    splits: BTreeMap<Span, usize>,
}

impl BinaryTree {
    pub fn new(n_leaves: usize, splits: BTreeMap<Span, usize>) -> Result<Self> {
        let tree = BinaryTree { n_leaves, splits };
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_leaves;
        if n == 0 {
            return Err(Error::Invalid("tree with zero leaves".into()));
        }
        if self.splits.len() != n - 1 {
            return Err(Error::Invalid(format!(
                "tree over {n} leaves needs {} internal spans, found {}",
                n - 1,
                self.splits.len()
            )));
        }
        if n >= 2 && !self.splits.contains_key(&Span::new(0, n)) {
            return Err(Error::Invalid("tree is missing the root span".into()));
        }
        for (span, &k) in &self.splits {
            if span.end > n || span.width() < 2 || k <= span.start || k >= span.end {
                return Err(Error::Invalid(format!("bad split {k} for span {span}")));
            }
            for child in [Span::new(span.start, k), Span::new(k, span.end)] {
                if child.width() >= 2 && !self.splits.contains_key(&child) {
                    return Err(Error::Invalid(format!("span {span} is missing child {child}")));
                }
            }
        }
        Ok(())
    }

    /// Builds a tree from the set of its internal spans (width >= 2).
    pub fn from_spans(n_leaves: usize, spans: &BTreeSet<Span>) -> Result<Self> {
        let mut splits = BTreeMap::new();
        for span in spans.iter().filter(|s| s.width() >= 2) {
            // The left child is the widest span starting at `span.start` inside `span`,
            // or the single leaf when no such span exists.
            let k = spans
                .range(Span::new(span.start, span.start + 1)..*span)
                .filter(|c| c.start == span.start && c.end < span.end)
                .map(|c| c.end)
                .max()
                .unwrap_or(span.start + 1);
            splits.insert(*span, k);
        }
        BinaryTree::new(n_leaves, splits)
    }

    pub fn left_branching(n_leaves: usize) -> Self {
        let splits = (2..=n_leaves).map(|j| (Span::new(0, j), j - 1)).collect();
        BinaryTree { n_leaves, splits }
    }

    pub fn right_branching(n_leaves: usize) -> Self {
        let splits = (0..n_leaves.saturating_sub(1))
            .map(|i| (Span::new(i, n_leaves), i + 1))
            .collect();
        BinaryTree { n_leaves, splits }
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn split(&self, span: Span) -> Option<usize> {
        self.splits.get(&span).copied()
    }

    /// Internal nodes as `(span, split)` pairs.
    pub fn nodes(&self) -> impl Iterator<Item = (Span, usize)> + '_ {
        self.splits.iter().map(|(s, k)| (*s, *k))
    }

    /// Internal spans (width >= 2), including the root.
    pub fn spans(&self) -> BTreeSet<Span> {
        self.splits.keys().copied().collect()
    }

    /// Whether `span` is a constituent of this tree. Leaves count as constituents.
    pub fn contains(&self, span: Span) -> bool {
        if span.width() == 1 {
            span.end <= self.n_leaves
        } else {
            self.splits.contains_key(&span)
        }
    }

    /// Bracketed rendering with every nonterminal labelled `X`.
    pub fn to_bracketed<S: AsRef<str>>(&self, tokens: &[S]) -> Result<String> {
        if tokens.len() != self.n_leaves {
            return Err(Error::Dimension {
                expected: self.n_leaves,
                got: tokens.len(),
            });
        }
        let mut out = String::new();
        self.write_node(Span::new(0, self.n_leaves), tokens, &mut out);
        Ok(out)
    }

    fn write_node<S: AsRef<str>>(&self, span: Span, tokens: &[S], out: &mut String) {
        if span.width() == 1 {
            out.push_str("(X ");
            out.push_str(tokens[span.start].as_ref());
            out.push(')');
            return;
        }
        let k = self.splits[&span];
        out.push_str("(X ");
        self.write_node(Span::new(span.start, k), tokens, out);
        out.push(' ');
        self.write_node(Span::new(k, span.end), tokens, out);
        out.push(')');
    }
}
