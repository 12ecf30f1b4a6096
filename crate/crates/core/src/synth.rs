//! Synthetic corpora from a small probabilistic grammar.
//!
//! Grammar files hold one weighted rule per line, `weight LHS -> sym sym ...`,
//! with `#` comments. Any symbol that never appears on a left-hand side is a
//! terminal. Weights are normalized per left-hand side. The first rule's LHS
//! is the start symbol.
//!
//! A terminal produced by a rule with a single right-hand symbol takes the
//! rule's LHS as its POS tag; terminals inside longer rules are tagged `NNP`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, ConstraintSource, SpanConstraint};
use crate::corpus::{GoldTree, LabeledSpan, Sentence};
use crate::error::{Error, Result};
use crate::tree::Span;

/// Label given to entity spans recorded in `Sentence::gold_spans`.
pub const ENTITY_LABEL: &str = "ENT";

const MULTI_TERMINAL_TAG: &str = "NNP";

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub lhs: String,
    pub rhs: Vec<String>,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct Grammar {
    start: String,
    rules: BTreeMap<String, Vec<Rule>>,
    samplers: BTreeMap<String, WeightedIndex<f64>>,
}

impl Grammar {
    pub fn new(rules: Vec<Rule>) -> Result<Self> {
        let start = rules
            .first()
            .map(|r| r.lhs.clone())
            .ok_or_else(|| Error::Invalid("grammar has no rules".into()))?;
        let mut by_lhs: BTreeMap<String, Vec<Rule>> = BTreeMap::new();
        for r in rules {
            if r.rhs.is_empty() {
                return Err(Error::Invalid(format!("rule for {} has an empty right-hand side", r.lhs)));
            }
            if !(r.weight.is_finite() && r.weight > 0.0) {
                return Err(Error::Invalid(format!("rule for {} has weight {}", r.lhs, r.weight)));
            }
            by_lhs.entry(r.lhs.clone()).or_default().push(r);
        }
        let samplers = by_lhs
            .iter()
            .map(|(lhs, rs)| {
                let w = WeightedIndex::new(rs.iter().map(|r| r.weight))
                    .map_err(|e| Error::Invalid(format!("weights for {lhs}: {e}")))?;
                Ok((lhs.clone(), w))
            })
            .collect::<Result<_>>()?;
        Ok(Grammar {
            start,
            rules: by_lhs,
            samplers,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Invalid(format!("grammar line {}: {msg}", idx + 1));
            let mut parts = line.split_whitespace();
            let weight: f64 = parts
                .next()
                .and_then(|w| w.parse().ok())
                .ok_or_else(|| bad("expected a leading weight"))?;
            let lhs = parts.next().ok_or_else(|| bad("missing left-hand side"))?.to_owned();
            if parts.next() != Some("->") {
                return Err(bad("expected `->` after the left-hand side"));
            }
            let rhs: Vec<String> = parts.map(str::to_owned).collect();
            if rhs.is_empty() {
                return Err(bad("empty right-hand side"));
            }
            rules.push(Rule { lhs, rhs, weight });
        }
        Grammar::new(rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Grammar::parse(&text)
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn is_nonterminal(&self, sym: &str) -> bool {
        self.rules.contains_key(sym)
    }

    pub fn num_rules(&self) -> usize {
        self.rules.values().map(Vec::len).sum()
    }

    pub fn terminals(&self) -> BTreeSet<&str> {
        self.rules
            .values()
            .flatten()
            .flat_map(|r| r.rhs.iter())
            .filter(|s| !self.is_nonterminal(s))
            .map(String::as_str)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        // Start symbol first so that re-parsing keeps it.
        let order = std::iter::once(&self.start).chain(self.rules.keys().filter(|k| **k != self.start));
        for lhs in order {
            for r in &self.rules[lhs] {
                let _ = writeln!(out, "{} {} -> {}", r.weight, r.lhs, r.rhs.join(" "));
            }
        }
        out
    }
}

/// Phrases of the default entity lexicon.
pub const DEFAULT_ENTITIES: [&str; 30] = [
    "new york city",
    "new york times",
    "los angeles",
    "san jose",
    "san diego",
    "san francisco bay",
    "hong kong",
    "rio de janeiro",
    "buenos aires",
    "tel aviv",
    "sierra leone",
    "costa rica",
    "puerto rico",
    "las vegas",
    "santa fe",
    "abu dhabi",
    "sri lanka",
    "united states",
    "united nations",
    "red cross",
    "world health organization",
    "wall street journal",
    "goldman sachs",
    "morgan stanley",
    "dow jones industrial average",
    "european central bank",
    "supreme court",
    "general motors",
    "north sea",
    "south korea",
];

const DEFAULT_RULES: &str = "\
0.75 S -> NP VP
0.15 S -> PP NP VP
0.10 S -> NP VP PP
0.35 NP -> DT NN
0.20 NP -> DT JJ NN
0.30 NP -> ENT
0.10 NP -> NP PP
0.05 NP -> PRP
0.50 VP -> VB NP
0.20 VP -> VB NP PP
0.10 VP -> VB
0.10 VP -> VB ADV
0.10 VP -> MD VB NP
1.00 PP -> IN NP
";

const DT: &str = "the a this that every";
const NN: &str = "dog cat man woman child car house city river report book letter idea plan \
                  market price bank school teacher student doctor nurse game song story road \
                  bridge tree garden window door table chair paper phone team company office \
                  island storm";
const JJ: &str = "big small old young red green happy sad quick slow bright dark strong weak \
                  rich poor famous quiet loud early";
const VB: &str = "saw liked found visited built sold bought wrote read left called helped met \
                  watched praised moved opened closed heard followed reached signed joined \
                  painted cleaned fixed carried tested crossed won";
const IN: &str = "in on near with from under behind across beside about";
const PRP: &str = "he she they we it";
const ADV: &str = "quickly slowly today again often rarely early later yesterday together";
const MD: &str = "will can should may";

/// The desk-scale grammar: 14 phrasal rules, about 190 word types, and one
/// `ENT` rule per entity phrase.
pub fn default_grammar() -> Grammar {
    let mut text = String::from(DEFAULT_RULES);
    for (tag, words) in [
        ("DT", DT),
        ("NN", NN),
        ("JJ", JJ),
        ("VB", VB),
        ("IN", IN),
        ("PRP", PRP),
        ("ADV", ADV),
        ("MD", MD),
    ] {
        for w in words.split_whitespace() {
            let _ = writeln!(text, "1 {tag} -> {w}");
        }
    }
    for e in DEFAULT_ENTITIES {
        let _ = writeln!(text, "1 ENT -> {e}");
    }
    Grammar::parse(&text).expect("default grammar is well formed")
}

pub fn default_entities() -> Vec<Vec<String>> {
    DEFAULT_ENTITIES
        .iter()
        .map(|p| p.split_whitespace().map(str::to_owned).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_sentences: usize,
    pub seed: u64,
    /// Fraction of sentences whose entity spans are emitted as constraints.
    pub constraint_fraction: f64,
    /// Fraction of emitted constraints replaced by random non-constituent spans.
    pub noise: f64,
    pub max_depth: usize,
    pub max_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sentences: 2000,
            seed: 0,
            constraint_fraction: 0.5,
            noise: 0.0,
            max_depth: 12,
            max_len: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub sentences: Vec<Sentence>,
    pub constraints: ConstraintSet,
    /// Derivations discarded for exceeding the depth or length cap.
    pub resampled: usize,
    /// Constraints replaced by noise.
    pub noisy: usize,
}

struct Node {
    label: String,
    span: Span,
}

/// Samples a corpus; deterministic given the grammar, lexicon and config.
pub fn generate(grammar: &Grammar, entities: &[Vec<String>], config: &SynthConfig) -> Result<SynthCorpus> {
    if !(0.0..=1.0).contains(&config.constraint_fraction) || !(0.0..=1.0).contains(&config.noise) {
        return Err(Error::Invalid("constraint fraction and noise must lie in [0, 1]".into()));
    }
    let lexicon: BTreeSet<Vec<String>> = entities
        .iter()
        .map(|p| p.iter().map(|t| t.to_lowercase()).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sentences = Vec::with_capacity(config.n_sentences);
    let mut constraints = ConstraintSet::default();
    let (mut resampled, mut noisy) = (0usize, 0usize);
    const MAX_ATTEMPTS: usize = 10_000;

    while sentences.len() < config.n_sentences {
        let mut attempts = 0;
        let (tokens, pos, nodes) = loop {
            let mut tokens = Vec::new();
            let mut pos = Vec::new();
            let mut nodes = Vec::new();
            let ok = expand(grammar, grammar.start(), 0, config, &mut rng, &mut tokens, &mut pos, &mut nodes);
            if ok && !tokens.is_empty() && tokens.len() <= config.max_len {
                // A start rule emitting one terminal leaves no node over the sentence.
                if nodes.is_empty() {
                    nodes.push(Node {
                        label: grammar.start().to_owned(),
                        span: Span::new(0, tokens.len()),
                    });
                }
                break (tokens, pos, nodes);
            }
            resampled += 1;
            attempts += 1;
            if attempts >= MAX_ATTEMPTS {
                return Err(Error::Invalid(format!(
                    "no derivation within depth {} and length {} after {MAX_ATTEMPTS} attempts",
                    config.max_depth, config.max_len
                )));
            }
        };
        let id = sentences.len();
        let n = tokens.len();
        let spans: Vec<LabeledSpan> = nodes
            .iter()
            .map(|nd| LabeledSpan {
                span: nd.span,
                label: nd.label.clone(),
            })
            .collect();
        let gold = GoldTree::new(n, spans, Some(pos))?;
        let lowered: Vec<String> = tokens.iter().map(|t: &String| t.to_lowercase()).collect();
        let entity_spans: BTreeSet<Span> = gold
            .span_set()
            .into_iter()
            .filter(|s| !s.is_trivial(n) && lexicon.contains(&lowered[s.start..s.end]))
            .collect();

        if !entity_spans.is_empty() && rng.gen_bool(config.constraint_fraction) {
            let gold_set = gold.span_set();
            for &span in &entity_spans {
                let mut emitted = span;
                if config.noise > 0.0 && rng.gen_bool(config.noise) {
                    if let Some(s) = random_non_constituent(n, &gold_set, &mut rng) {
                        emitted = s;
                        noisy += 1;
                    }
                }
                constraints.insert(SpanConstraint::new(id, emitted, ConstraintSource::Synthetic));
            }
        }
        let mut sentence = Sentence::new(id, tokens);
        sentence.gold_spans = Some(
            entity_spans
                .into_iter()
                .map(|span| LabeledSpan {
                    span,
                    label: ENTITY_LABEL.to_owned(),
                })
                .collect(),
        );
        sentence.gold_tree = Some(gold);
        sentences.push(sentence);
    }
    if resampled > 0 {
        log::info!("resampled {resampled} derivations exceeding the depth or length cap");
    }
    Ok(SynthCorpus {
        sentences,
        constraints,
        resampled,
        noisy,
    })
}

#[allow(clippy::too_many_arguments)]
fn expand(
    grammar: &Grammar,
    symbol: &str,
    depth: usize,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
    tokens: &mut Vec<String>,
    pos: &mut Vec<String>,
    nodes: &mut Vec<Node>,
) -> bool {
    if depth > config.max_depth || tokens.len() > config.max_len {
        return false;
    }
    let rules = &grammar.rules[symbol];
    let rule = &rules[grammar.samplers[symbol].sample(rng)];
    if rule.rhs.len() == 1 && !grammar.is_nonterminal(&rule.rhs[0]) {
        tokens.push(rule.rhs[0].clone());
        pos.push(symbol.to_owned());
        return true;
    }
    let start = tokens.len();
    let slot = nodes.len();
    nodes.push(Node {
        label: symbol.to_owned(),
        span: Span::new(start, start),
    });
    for sym in &rule.rhs {
        if grammar.is_nonterminal(sym) {
            if !expand(grammar, sym, depth + 1, config, rng, tokens, pos, nodes) {
                return false;
            }
        } else {
            tokens.push(sym.clone());
            pos.push(MULTI_TERMINAL_TAG.to_owned());
        }
    }
    nodes[slot].span = Span::new(start, tokens.len());
    true
}

/// A uniformly drawn non-trivial span that is not a gold constituent, if any.
fn random_non_constituent(n: usize, gold: &BTreeSet<Span>, rng: &mut ChaCha8Rng) -> Option<Span> {
    let candidates: Vec<Span> = (2..n)
        .flat_map(|w| (0..=n - w).map(move |i| Span::new(i, i + w)))
        .filter(|s| !gold.contains(s))
        .collect();
    (!candidates.is_empty()).then(|| candidates[rng.gen_range(0..candidates.len())])
}

/// Splits a corpus into a head and a tail, renumbering the tail from zero and
/// carrying constraints along.
pub fn split_corpus(corpus: &SynthCorpus, head: usize) -> ((Vec<Sentence>, ConstraintSet), (Vec<Sentence>, ConstraintSet)) {
    let head = head.min(corpus.sentences.len());
    let mut a = (Vec::new(), ConstraintSet::default());
    let mut b = (Vec::new(), ConstraintSet::default());
    for s in &corpus.sentences {
        let (target, offset) = if s.id < head { (&mut a, 0) } else { (&mut b, head) };
        let mut moved = s.clone();
        moved.id -= offset;
        for span in corpus.constraints.spans(s.id) {
            target.1.insert(SpanConstraint::new(moved.id, span, ConstraintSource::Synthetic));
        }
        target.0.push(moved);
    }
    (a, b)
}
