//! Tree extraction: CKY over local split scores, constrained CKY, and
//! exhaustive enumeration for testing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chart::Chart;
use crate::error::{Error, Result};
use crate::tree::{BinaryTree, Span};

/// Largest sentence length [`enumerate_trees`] accepts.
pub const MAX_ENUMERATION_LEN: usize = 12;

/// Anything that assigns a local score to every `(span, split)` pair.
pub trait SplitScores {
    fn len(&self) -> usize;

    fn local(&self, span: Span, k: usize) -> f64;
}

impl SplitScores for Chart {
    fn len(&self) -> usize {
        Chart::len(self)
    }

    fn local(&self, span: Span, k: usize) -> f64 {
        self.local_score(span, k)
    }
}

/// Dense table of local scores, mostly for tests and offline decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    n: usize,
    scores: BTreeMap<(Span, usize), f64>,
}

impl ScoreTable {
    pub fn from_fn(n: usize, mut f: impl FnMut(Span, usize) -> f64) -> Self {
        let mut scores = BTreeMap::new();
        for w in 2..=n {
            for i in 0..=n - w {
                let span = Span::new(i, i + w);
                for k in i + 1..i + w {
                    scores.insert((span, k), f(span, k));
                }
            }
        }
        ScoreTable { n, scores }
    }

    pub fn from_chart(chart: &Chart) -> Self {
        Self::from_fn(chart.len(), |s, k| chart.local_score(s, k))
    }
}

impl SplitScores for ScoreTable {
    fn len(&self) -> usize {
        self.n
    }

    fn local(&self, span: Span, k: usize) -> f64 {
        self.scores[&(span, k)]
    }
}

/// How constrained decoding trades constraint satisfaction against score.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CckyMode {
    /// Maximise satisfied constraints first, then the tree score.
    Lexicographic,
    /// Maximise `S(y) + ε·g(y, z)`.
    Epsilon(f64),
}

impl Default for CckyMode {
    fn default() -> Self {
        CckyMode::Lexicographic
    }
}

/// Tree score: the sum of local scores over internal nodes, accumulated in
/// the same order as the CKY recursion.
pub fn tree_score<C: SplitScores + ?Sized>(tree: &BinaryTree, scores: &C) -> Result<f64> {
    if tree.n_leaves() != scores.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            got: tree.n_leaves(),
        });
    }
    Ok(node_score(tree, scores, Span::new(0, tree.n_leaves())))
}

fn node_score<C: SplitScores + ?Sized>(tree: &BinaryTree, scores: &C, span: Span) -> f64 {
    if span.width() < 2 {
        return 0.0;
    }
    let k = tree.split(span).expect("valid tree has every internal split");
    scores.local(span, k) + node_score(tree, scores, Span::new(span.start, k)) + node_score(tree, scores, Span::new(k, span.end))
}

#[derive(Copy, Clone, Debug)]
struct Best {
    bonus: i64,
    score: f64,
    k: usize,
}

/// Result of a bonus-augmented decode.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tree: BinaryTree,
    /// Sum of bonuses over the tree's internal spans.
    pub bonus: i64,
    /// Tree score, without any bonus.
    pub score: f64,
}

/// CKY with an integer bonus on every internal span. In lexicographic mode
/// trees are ranked by total bonus then score; in epsilon mode by
/// `score + ε·bonus`. Ties go to the smallest split point.
pub fn decode_with_bonus<C, F>(scores: &C, bonus: F, mode: CckyMode) -> Decoded
where
    C: SplitScores + ?Sized,
    F: Fn(Span) -> i64,
{
    let n = scores.len();
    let mut best: BTreeMap<Span, Best> = BTreeMap::new();
    let leaf = Best {
        bonus: 0,
        score: 0.0,
        k: 0,
    };
    let get = |best: &BTreeMap<Span, Best>, s: Span| if s.width() <= 1 { leaf } else { best[&s] };
    let objective = |b: &Best| match mode {
        CckyMode::Lexicographic => b.score,
        CckyMode::Epsilon(eps) => b.score + eps * b.bonus as f64,
    };
    for w in 2..=n {
        for i in 0..=n - w {
            let span = Span::new(i, i + w);
            let own = bonus(span);
            let mut chosen: Option<Best> = None;
            for k in i + 1..i + w {
                let (l, r) = (get(&best, Span::new(i, k)), get(&best, Span::new(k, span.end)));
                let cand = Best {
                    bonus: own + l.bonus + r.bonus,
                    score: scores.local(span, k) + l.score + r.score,
                    k,
                };
                let better = match (&chosen, mode) {
                    (None, _) => true,
                    (Some(c), CckyMode::Lexicographic) => {
                        cand.bonus > c.bonus || (cand.bonus == c.bonus && cand.score > c.score)
                    }
                    (Some(c), CckyMode::Epsilon(_)) => objective(&cand) > objective(c),
                };
                if better {
                    chosen = Some(cand);
                }
            }
            best.insert(span, chosen.expect("span of width >= 2 has a split"));
        }
    }
    let mut splits = BTreeMap::new();
    let mut stack = vec![Span::new(0, n)];
    while let Some(span) = stack.pop() {
        if span.width() < 2 {
            continue;
        }
        let k = best[&span].k;
        splits.insert(span, k);
        stack.push(Span::new(span.start, k));
        stack.push(Span::new(k, span.end));
    }
    let tree = BinaryTree::new(n, splits).expect("CKY back-pointers form a full binary tree");
    let root = get(&best, Span::new(0, n));
    Decoded {
        tree,
        bonus: root.bonus,
        score: root.score,
    }
}

/// Highest-scoring binary tree.
pub fn cky<C: SplitScores + ?Sized>(scores: &C) -> BinaryTree {
    decode_with_bonus(scores, |_| 0, CckyMode::Lexicographic).tree
}

/// Highest-scoring tree among those satisfying the most constraints
/// (lexicographic), or maximising `S + ε·g` (epsilon mode).
pub fn ccky<C: SplitScores + ?Sized>(scores: &C, constraints: &BTreeSet<Span>, mode: CckyMode) -> BinaryTree {
    decode_with_bonus(scores, |s| i64::from(constraints.contains(&s)), mode).tree
}

/// Every binary tree over `n` leaves; Catalan(n-1) of them.
pub fn enumerate_trees(n: usize) -> Result<Vec<BinaryTree>> {
    if n == 0 || n > MAX_ENUMERATION_LEN {
        return Err(Error::Invalid(format!(
            "tree enumeration supports 1..={MAX_ENUMERATION_LEN} leaves, got {n}"
        )));
    }
    let mut memo: BTreeMap<Span, Vec<Vec<(Span, usize)>>> = BTreeMap::new();
    let all = enumerate_span(Span::new(0, n), &mut memo);
    Ok(all
        .into_iter()
        .map(|nodes| BinaryTree::new(n, nodes.into_iter().collect()).expect("enumerated tree is valid"))
        .collect())
}

fn enumerate_span(span: Span, memo: &mut BTreeMap<Span, Vec<Vec<(Span, usize)>>>) -> Vec<Vec<(Span, usize)>> {
    if span.width() == 1 {
        return vec![Vec::new()];
    }
    if let Some(v) = memo.get(&span) {
        return v.clone();
    }
    let mut out = Vec::new();
    for k in span.start + 1..span.end {
        let lefts = enumerate_span(Span::new(span.start, k), memo);
        let rights = enumerate_span(Span::new(k, span.end), memo);
        for l in &lefts {
            for r in &rights {
                let mut nodes = Vec::with_capacity(l.len() + r.len() + 1);
                nodes.push((span, k));
                nodes.extend_from_slice(l);
                nodes.extend_from_slice(r);
                out.push(nodes);
            }
        }
    }
    memo.insert(span, out.clone());
    out
}
