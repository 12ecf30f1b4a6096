//! Unlabeled bracketing evaluation.
//!
//! F1 is computed per sentence and averaged. Before scoring, punctuation
//! tokens are removed from both trees (span boundaries are remapped onto the
//! remaining tokens) and trivial spans (width 1, whole sentence) are dropped.
//! A sentence whose reference has no non-trivial span scores 100.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::corpus::{GoldTree, Sentence};
use crate::error::{Error, Result};
use crate::tree::{BinaryTree, Span};

/// Part-of-speech tags treated as punctuation.
pub const PUNCT_TAGS: [&str; 7] = [".", ",", ":", "``", "''", "-LRB-", "-RRB-"];

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PunctPolicy {
    /// POS tags when the reference carries them, characters otherwise.
    Auto,
    Pos,
    /// Tokens made only of Unicode punctuation characters.
    Chars,
    None,
}

impl fmt::Display for PunctPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PunctPolicy::Auto => "auto",
            PunctPolicy::Pos => "pos",
            PunctPolicy::Chars => "chars",
            PunctPolicy::None => "none",
        })
    }
}

impl FromStr for PunctPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(PunctPolicy::Auto),
            "pos" => Ok(PunctPolicy::Pos),
            "chars" => Ok(PunctPolicy::Chars),
            "none" => Ok(PunctPolicy::None),
            other => Err(Error::Invalid(format!("unknown punctuation policy `{other}`"))),
        }
    }
}

pub fn is_punct_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| c.is_ascii_punctuation() || is_unicode_punct(c))
}

fn is_unicode_punct(c: char) -> bool {
    matches!(c,
        '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '\u{3001}'..='\u{3003}'
        | '\u{3008}'..='\u{3011}' | '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}'
        | '\u{00B7}' | '\u{00BB}' | '\u{00BF}' | '\u{FF01}'..='\u{FF0F}')
}

/// `true` for tokens kept for evaluation.
pub fn keep_mask<S: AsRef<str>>(tokens: &[S], pos: Option<&[String]>, policy: PunctPolicy) -> Vec<bool> {
    let by_pos = |tags: &[String]| tags.iter().map(|t| !PUNCT_TAGS.contains(&t.as_str())).collect();
    let by_chars = || tokens.iter().map(|t| !is_punct_token(t.as_ref())).collect();
    match (policy, pos) {
        (PunctPolicy::None, _) => vec![true; tokens.len()],
        (PunctPolicy::Pos | PunctPolicy::Auto, Some(tags)) => by_pos(tags),
        (PunctPolicy::Pos, None) => vec![true; tokens.len()],
        (PunctPolicy::Chars | PunctPolicy::Auto, _) => by_chars(),
    }
}

/// Maps spans onto the kept tokens and drops empty and trivial results.
pub fn filter_spans(spans: impl IntoIterator<Item = Span>, keep: &[bool]) -> BTreeSet<Span> {
    let mut before = Vec::with_capacity(keep.len() + 1);
    let mut count = 0;
    before.push(0);
    for &k in keep {
        count += usize::from(k);
        before.push(count);
    }
    spans
        .into_iter()
        .map(|s| Span::new(before[s.start], before[s.end]))
        .filter(|s| s.width() > 0 && !s.is_trivial(count))
        .collect()
}

/// F1 over two already-filtered span sets, in percent.
pub fn span_f1(pred: &BTreeSet<Span>, gold: &BTreeSet<Span>) -> f64 {
    if gold.is_empty() {
        return 100.0;
    }
    let overlap = pred.intersection(gold).count() as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    let precision = overlap / pred.len() as f64;
    let recall = overlap / gold.len() as f64;
    100.0 * 2.0 * precision * recall / (precision + recall)
}

fn gold_of(sentence: &Sentence) -> Result<&GoldTree> {
    sentence
        .gold_tree
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("sentence {} has no gold tree", sentence.id)))
}

pub fn sentence_f1(pred: &BinaryTree, gold: &Sentence, policy: PunctPolicy) -> Result<f64> {
    let tree = gold_of(gold)?;
    if pred.n_leaves() != gold.len() || tree.n_leaves() != gold.len() {
        return Err(Error::Dimension {
            expected: gold.len(),
            got: pred.n_leaves(),
        });
    }
    let keep = keep_mask(&gold.tokens, tree.pos_tags(), policy);
    let p = filter_spans(pred.spans(), &keep);
    let g = filter_spans(tree.span_set(), &keep);
    Ok(span_f1(&p, &g))
}

/// Mean sentence-level F1.
pub fn corpus_f1(preds: &[BinaryTree], golds: &[Sentence], policy: PunctPolicy) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::Dimension {
            expected: golds.len(),
            got: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Invalid("no sentences to evaluate".into()));
    }
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(golds) {
        total += sentence_f1(p, g, policy)?;
    }
    Ok(total / preds.len() as f64)
}

/// Percent of reference spans (width >= 2) present in the predicted trees;
/// `None` when there is nothing to recall.
pub fn span_recall(preds: &[BinaryTree], spans: &[BTreeSet<Span>]) -> Option<f64> {
    let (mut found, mut total) = (0usize, 0usize);
    for (tree, set) in preds.iter().zip(spans) {
        for s in set.iter().filter(|s| s.width() >= 2) {
            total += 1;
            found += usize::from(tree.contains(*s));
        }
    }
    (total > 0).then(|| 100.0 * found as f64 / total as f64)
}

/// [`span_recall`] with constraints keyed by sentence id; `ids[i]` is the
/// sentence id of `preds[i]`.
pub fn constraint_recall(preds: &[BinaryTree], ids: &[usize], constraints: &ConstraintSet) -> Option<f64> {
    let sets: Vec<BTreeSet<Span>> = ids.iter().map(|&id| constraints.for_sentence(id)).collect();
    span_recall(preds, &sets)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bucket {
    pub label: String,
    pub sentences: usize,
    pub constraints: usize,
    pub f1: f64,
    /// `None` when the bucket has no constraints.
    pub recall: Option<f64>,
}

/// Groups sentences by the label of the reference root.
pub fn bucket_report(
    preds: &[BinaryTree],
    golds: &[Sentence],
    constraints: &ConstraintSet,
    policy: PunctPolicy,
) -> Result<Vec<Bucket>> {
    if preds.len() != golds.len() {
        return Err(Error::Dimension {
            expected: golds.len(),
            got: preds.len(),
        });
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, g) in golds.iter().enumerate() {
        groups.entry(gold_of(g)?.root_label().to_owned()).or_default().push(i);
    }
    let mut out = Vec::new();
    for (label, members) in groups {
        let p: Vec<BinaryTree> = members.iter().map(|&i| preds[i].clone()).collect();
        let g: Vec<Sentence> = members.iter().map(|&i| golds[i].clone()).collect();
        let ids: Vec<usize> = g.iter().map(|s| s.id).collect();
        let n_z = ids.iter().map(|&id| constraints.for_sentence(id).len()).sum();
        out.push(Bucket {
            label,
            sentences: members.len(),
            constraints: n_z,
            f1: corpus_f1(&p, &g, policy)?,
            recall: if n_z == 0 { None } else { constraint_recall(&p, &ids, constraints) },
        });
    }
    Ok(out)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branching {
    Left,
    Right,
}

/// Binarizes an n-ary reference tree; flat nodes are split in the given direction.
pub fn binarize(gold: &GoldTree, direction: Branching) -> BinaryTree {
    let n = gold.n_leaves();
    let spans = gold.span_set();
    let mut splits = BTreeMap::new();
    binarize_node(Span::new(0, n), &spans, direction, &mut splits);
    BinaryTree::new(n, splits).expect("binarization yields a full binary tree")
}

fn binarize_node(span: Span, spans: &BTreeSet<Span>, direction: Branching, splits: &mut BTreeMap<Span, usize>) {
    if span.width() < 2 {
        return;
    }
    let mut children = Vec::new();
    let mut pos = span.start;
    while pos < span.end {
        let end = spans
            .range(Span::new(pos, pos + 1)..=Span::new(pos, span.end))
            .filter(|c| **c != span)
            .map(|c| c.end)
            .max()
            .unwrap_or(pos + 1);
        children.push(Span::new(pos, end));
        pos = end;
    }
    match direction {
        Branching::Right => {
            for child in &children[..children.len() - 1] {
                splits.insert(Span::new(child.start, span.end), child.end);
            }
        }
        Branching::Left => {
            for child in children.iter().skip(1).rev() {
                splits.insert(Span::new(span.start, child.end), child.start);
            }
        }
    }
    for child in children {
        binarize_node(child, spans, direction, splits);
    }
}

/// Corpus F1 of the binarized references against themselves.
pub fn binarized_upper_bound(golds: &[Sentence], direction: Branching, policy: PunctPolicy) -> Result<f64> {
    let preds = golds
        .iter()
        .map(|s| gold_of(s).map(|g| binarize(g, direction)))
        .collect::<Result<Vec<_>>>()?;
    corpus_f1(&preds, golds, policy)
}

/// Evaluation summary written by the `eval` command.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub punct_policy: PunctPolicy,
    pub config_hash: Option<String>,
    pub f1: f64,
    pub constraint_recall: Option<f64>,
    pub constraints: usize,
    pub upper_bound: Option<f64>,
    pub buckets: Vec<Bucket>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<22} {:>10}", "sentences", self.sentences);
        let _ = writeln!(out, "{:<22} {:>10}", "punct policy", self.punct_policy.to_string());
        if let Some(h) = &self.config_hash {
            let _ = writeln!(out, "{:<22} {:>10}", "config hash", h);
        }
        let _ = writeln!(out, "{:<22} {:>10.2}", "F1", self.f1);
        let _ = writeln!(out, "{:<22} {:>10}", "constraints (n^z)", self.constraints);
        let _ = writeln!(out, "{:<22} {:>10}", "constraint recall", fmt_opt(self.constraint_recall));
        if let Some(ub) = self.upper_bound {
            let _ = writeln!(out, "{:<22} {:>10.2}", "binarized UB", ub);
        }
        if !self.buckets.is_empty() {
            let _ = writeln!(out, "\n{:<10} {:>8} {:>8} {:>8} {:>8}", "root", "n", "n^z", "F1", "R^z");
            for b in &self.buckets {
                let _ = writeln!(
                    out,
                    "{:<10} {:>8} {:>8} {:>8.2} {:>8}",
                    b.label,
                    b.sentences,
                    b.constraints,
                    b.f1,
                    fmt_opt(b.recall)
                );
            }
        }
        out
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sentences={}", self.sentences);
        let _ = writeln!(out, "punct_policy={}", self.punct_policy);
        let _ = writeln!(out, "config_hash={}", self.config_hash.as_deref().unwrap_or("none"));
        let _ = writeln!(out, "F1={:.6}", self.f1);
        let _ = writeln!(out, "n_z={}", self.constraints);
        let _ = writeln!(out, "constraint_recall={}", kv_opt(self.constraint_recall));
        if let Some(ub) = self.upper_bound {
            let _ = writeln!(out, "upper_bound={ub:.6}");
        }
        for b in &self.buckets {
            let _ = writeln!(out, "bucket.{}.n={}", b.label, b.sentences);
            let _ = writeln!(out, "bucket.{}.n_z={}", b.label, b.constraints);
            let _ = writeln!(out, "bucket.{}.F1={:.6}", b.label, b.f1);
            let _ = writeln!(out, "bucket.{}.recall={}", b.label, kv_opt(b.recall));
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "∅".to_owned(), |x| format!("{x:.2}"))
}

fn kv_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_owned(), |x| format!("{x:.6}"))
}
