//! Reading and writing corpus artifacts: token files, bracketed trees,
//! constraint TSVs, phrase lists and prediction files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, ConstraintSource, SpanConstraint};
use crate::error::{Error, Result};
use crate::tree::{BinaryTree, Span};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub span: Span,
    pub label: String,
}

/// A (possibly n-ary) reference tree, stored as its labelled spans.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldTree {
    spans: Vec<LabeledSpan>,
    pos: Option<Vec<String>>,
    n_leaves: usize,
    root_label: String,
}

impl GoldTree {
    pub fn new(n_leaves: usize, mut spans: Vec<LabeledSpan>, pos: Option<Vec<String>>) -> Result<Self> {
        if n_leaves == 0 {
            return Err(Error::Invalid("gold tree without leaves".into()));
        }
        if let Some(tags) = &pos {
            if tags.len() != n_leaves {
                return Err(Error::Dimension {
                    expected: n_leaves,
                    got: tags.len(),
                });
            }
        }
        // The first root-covering entry names the outermost node.
        let root_label = spans
            .iter()
            .find(|s| s.span == Span::new(0, n_leaves))
            .map(|s| s.label.clone())
            .ok_or_else(|| Error::Invalid("gold tree does not cover the whole sentence".into()))?;
        spans.sort();
        spans.dedup();
        for s in &spans {
            if s.span.start >= s.span.end || s.span.end > n_leaves {
                return Err(Error::Invalid(format!("gold span {} out of bounds", s.span)));
            }
        }
        let unlabeled: Vec<Span> = spans.iter().map(|s| s.span).collect();
        for (i, a) in unlabeled.iter().enumerate() {
            if let Some(b) = unlabeled[i + 1..].iter().find(|b| a.crosses(b)) {
                return Err(Error::Invalid(format!("gold spans {a} and {b} cross")));
            }
        }
        Ok(GoldTree {
            spans,
            pos,
            n_leaves,
            root_label,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn labeled_spans(&self) -> &[LabeledSpan] {
        &self.spans
    }

    pub fn pos_tags(&self) -> Option<&[String]> {
        self.pos.as_deref()
    }

    pub fn span_set(&self) -> BTreeSet<Span> {
        self.spans.iter().map(|s| s.span).collect()
    }

    /// Label of the outermost node covering the sentence.
    pub fn root_label(&self) -> &str {
        &self.root_label
    }
}

/// One corpus line.
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub id: usize,
    pub tokens: Vec<String>,
    pub gold_tree: Option<GoldTree>,
    /// Reference spans such as named entities.
    pub gold_spans: Option<Vec<LabeledSpan>>,
}

impl Sentence {
    pub fn new(id: usize, tokens: Vec<String>) -> Self {
        Sentence {
            id,
            tokens,
            gold_tree: None,
            gold_spans: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    Tokens,
    PtbBrackets,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tokens" => Ok(CorpusFormat::Tokens),
            "ptb" | "ptb_brackets" | "brackets" => Ok(CorpusFormat::PtbBrackets),
            other => Err(Error::Invalid(format!("unknown corpus format `{other}`"))),
        }
    }
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            log::warn!("{}:{}: skipping empty line", path.display(), lineno + 1);
            continue;
        }
        let id = sentences.len();
        let sentence = match format {
            CorpusFormat::Tokens => {
                Sentence::new(id, trimmed.split_whitespace().map(str::to_owned).collect())
            }
            CorpusFormat::PtbBrackets => {
                let (tokens, tree) =
                    parse_bracketed(trimmed).map_err(|m| Error::parse(path, lineno + 1, m))?;
                let mut s = Sentence::new(id, tokens);
                s.gold_tree = Some(tree);
                s
            }
        };
        sentences.push(sentence);
    }
    Ok(sentences)
}

#[derive(Debug)]
enum Node {
    Leaf(String),
    Internal(String, Vec<Node>),
}

/// Parses one s-expression tree into its tokens and gold tree.
pub fn parse_bracketed(text: &str) -> std::result::Result<(Vec<String>, GoldTree), String> {
    let lexemes = lex(text);
    let mut pos = 0;
    let node = parse_node(&lexemes, &mut pos)?;
    if pos != lexemes.len() {
        return Err(format!("trailing input after tree at lexeme {pos}"));
    }
    let Node::Internal(..) = node else {
        return Err("expected a bracketed tree".into());
    };

    let mut tokens = Vec::new();
    let mut tags: Vec<Option<String>> = Vec::new();
    let mut spans = Vec::new();
    let mut root_labels = Vec::new();
    collect(&node, &mut tokens, &mut tags, &mut spans, &mut root_labels, true);
    if tokens.is_empty() {
        return Err("tree has no tokens".into());
    }
    let n = tokens.len();
    let root = Span::new(0, n);
    // Keep only the outermost non-empty root label, so `root_label` is unambiguous.
    spans.retain(|s: &LabeledSpan| s.span != root);
    let label = root_labels.into_iter().find(|l| !l.is_empty()).unwrap_or_else(|| "X".into());
    spans.insert(0, LabeledSpan { span: root, label });
    let pos = tags.into_iter().collect::<Option<Vec<_>>>();
    let tree = GoldTree::new(n, spans, pos).map_err(|e| e.to_string())?;
    Ok((tokens, tree))
}

enum Lexeme<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn lex(text: &str) -> Vec<Lexeme<'_>> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push(Lexeme::Open);
                i += 1;
            }
            b')' => {
                out.push(Lexeme::Close);
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len() && !matches!(bytes[i], b'(' | b')') && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                out.push(Lexeme::Atom(&text[start..i]));
            }
        }
    }
    out
}

fn parse_node(lexemes: &[Lexeme<'_>], pos: &mut usize) -> std::result::Result<Node, String> {
    match lexemes.get(*pos) {
        None => Err("unexpected end of input (unbalanced parentheses)".into()),
        Some(Lexeme::Close) => Err("unexpected `)`".into()),
        Some(Lexeme::Atom(a)) => {
            *pos += 1;
            Ok(Node::Leaf((*a).to_owned()))
        }
        Some(Lexeme::Open) => {
            *pos += 1;
            let label = match lexemes.get(*pos) {
                Some(Lexeme::Atom(a)) => {
                    *pos += 1;
                    (*a).to_owned()
                }
                _ => String::new(),
            };
            let mut children = Vec::new();
            loop {
                match lexemes.get(*pos) {
                    None => return Err("unbalanced parentheses: missing `)`".into()),
                    Some(Lexeme::Close) => {
                        *pos += 1;
                        break;
                    }
                    _ => children.push(parse_node(lexemes, pos)?),
                }
            }
            if children.is_empty() {
                return Err(format!("node `{label}` has no children"));
            }
            Ok(Node::Internal(label, children))
        }
    }
}

fn collect(
    node: &Node,
    tokens: &mut Vec<String>,
    tags: &mut Vec<Option<String>>,
    spans: &mut Vec<LabeledSpan>,
    root_labels: &mut Vec<String>,
    on_root_path: bool,
) {
    match node {
        Node::Leaf(word) => {
            tokens.push(word.clone());
            tags.push(None);
        }
        Node::Internal(label, children) => {
            if let [Node::Leaf(word)] = children.as_slice() {
                // Preterminal.
                tokens.push(word.clone());
                tags.push(Some(label.clone()));
                if on_root_path {
                    root_labels.push(label.clone());
                }
                return;
            }
            let start = tokens.len();
            if on_root_path {
                root_labels.push(label.clone());
            }
            let unary = children.len() == 1;
            for child in children {
                collect(child, tokens, tags, spans, root_labels, on_root_path && unary);
            }
            if !label.is_empty() {
                spans.push(LabeledSpan {
                    span: Span::new(start, tokens.len()),
                    label: label.clone(),
                });
            }
        }
    }
}

/// Result of reading a constraints TSV.
#[derive(Debug, Default)]
pub struct ConstraintLoad {
    pub constraints: ConstraintSet,
    /// `(line number, reason)` for every rejected line.
    pub rejected: Vec<(usize, String)>,
}

/// Reads `sentence_id \t start \t end` lines (end exclusive). Extra columns are ignored.
pub fn load_constraints(path: impl AsRef<Path>, source: ConstraintSource) -> Result<ConstraintLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = ConstraintLoad::default();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::parse(path, lineno + 1, "expected `sentence_id\\tstart\\tend`"));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::parse(path, lineno + 1, format!("`{s}`: {e}")))
        };
        let (sid, start, end) = (num(fields[0])?, num(fields[1])?, num(fields[2])?);
        if start >= end {
            out.rejected
                .push((lineno + 1, format!("start {start} >= end {end}")));
            continue;
        }
        out.constraints.insert(SpanConstraint {
            sentence_id: sid,
            span: Span::new(start, end),
            source,
        });
    }
    Ok(out)
}

/// Drops constraints whose sentence id or span falls outside `sentences`,
/// returning a description of each dropped constraint.
pub fn validate_constraints(constraints: &mut ConstraintSet, sentences: &[Sentence]) -> Vec<String> {
    let mut dropped = Vec::new();
    constraints.retain(|c| {
        match sentences.get(c.sentence_id) {
            Some(s) if c.span.end <= s.len() => true,
            Some(s) => {
                dropped.push(format!(
                    "constraint {} exceeds sentence {} of length {}",
                    c.span,
                    c.sentence_id,
                    s.len()
                ));
                false
            }
            None => {
                dropped.push(format!("sentence id {} out of range", c.sentence_id));
                false
            }
        }
    });
    dropped
}

pub fn write_constraints(path: impl AsRef<Path>, constraints: &ConstraintSet) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for c in constraints.iter() {
        writeln!(w, "{}\t{}\t{}", c.sentence_id, c.span.start, c.span.end).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one whitespace-tokenized phrase per line.
pub fn load_phrases(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut phrases = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let toks: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if !toks.is_empty() {
            phrases.push(toks);
        }
    }
    Ok(phrases)
}

pub fn write_phrases<P: AsRef<[String]>>(path: impl AsRef<Path>, phrases: &[P]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for p in phrases {
        writeln!(w, "{}", p.as_ref().join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes one `X`-labelled bracketing per line.
pub fn write_predictions<S: AsRef<str>>(
    path: impl AsRef<Path>,
    trees: &[BinaryTree],
    tokens: &[Vec<S>],
) -> Result<()> {
    let path = path.as_ref();
    if trees.len() != tokens.len() {
        return Err(Error::Dimension {
            expected: trees.len(),
            got: tokens.len(),
        });
    }
    let mut w = create(path)?;
    for (tree, toks) in trees.iter().zip(tokens) {
        let line = tree.to_bracketed(toks)?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes gold trees back in bracketed form, preserving labels and POS tags.
pub fn write_gold(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for s in sentences {
        let tree = s
            .gold_tree
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("sentence {} has no gold tree", s.id)))?;
        writeln!(w, "{}", render_gold(&s.tokens, tree)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Renders a gold tree as an s-expression.
pub fn render_gold<S: AsRef<str>>(tokens: &[S], tree: &GoldTree) -> String {
    // Group labels per span; sorting by (start, -end) yields a pre-order walk.
    let mut by_span: BTreeMap<(usize, std::cmp::Reverse<usize>), Vec<&str>> = BTreeMap::new();
    for ls in tree.labeled_spans() {
        by_span
            .entry((ls.span.start, std::cmp::Reverse(ls.span.end)))
            .or_default()
            .push(&ls.label);
    }
    let root_label = tree.root_label().to_owned();
    if let Some(labels) = by_span.get_mut(&(0, std::cmp::Reverse(tree.n_leaves()))) {
        labels.sort_by_key(|l| *l != root_label);
    }
    let mut out = String::new();
    render_range(0, tree.n_leaves(), tokens, tree, &by_span, &mut out);
    out
}

fn render_range<S: AsRef<str>>(
    start: usize,
    end: usize,
    tokens: &[S],
    tree: &GoldTree,
    by_span: &BTreeMap<(usize, std::cmp::Reverse<usize>), Vec<&str>>,
    out: &mut String,
) {
    let labels = by_span.get(&(start, std::cmp::Reverse(end)));
    let wrap = labels.map(|l| l.len()).unwrap_or(0);
    if let Some(labels) = labels {
        for l in labels {
            out.push('(');
            out.push_str(l);
            out.push(' ');
        }
    }
    let mut pos = start;
    let mut first = true;
    while pos < end {
        if !first {
            out.push(' ');
        }
        first = false;
        // Widest labelled span starting at `pos` strictly inside the current range.
        let child_end = by_span
            .range((pos, std::cmp::Reverse(end))..=(pos, std::cmp::Reverse(pos + 1)))
            .map(|(&(_, std::cmp::Reverse(e)), _)| e)
            .find(|&e| e <= end && !(pos == start && e == end));
        match child_end {
            Some(e) => {
                render_range(pos, e, tokens, tree, by_span, out);
                pos = e;
            }
            None => {
                let tag = tree.pos_tags().map(|t| t[pos].as_str());
                match tag {
                    Some(t) => {
                        out.push('(');
                        out.push_str(t);
                        out.push(' ');
                        out.push_str(tokens[pos].as_ref());
                        out.push(')');
                    }
                    None => out.push_str(tokens[pos].as_ref()),
                }
                pos += 1;
            }
        }
    }
    for _ in 0..wrap {
        out.push(')');
    }
}

pub fn write_tokens<S: AsRef<str>>(path: impl AsRef<Path>, sentences: &[Vec<S>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for toks in sentences {
        let line: Vec<&str> = toks.iter().map(AsRef::as_ref).collect();
        writeln!(w, "{}", line.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}
