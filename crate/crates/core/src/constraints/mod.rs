//! Span constraints: mining from lexicons and PMI phrases, filtering, and
//! agreement statistics against reference trees.

mod filter;
mod gazetteer;
mod pmi;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tree::Span;

pub use filter::{restrict_constraints, synth_constraints, Restricted};
pub use gazetteer::{match_gazetteer, match_lexicon, GazetteerIndex};
pub use pmi::{induce_pmi_phrases, match_pmi, pair_score, PmiConfig, PmiLexicon};
pub use stats::{constraint_stats, ConstraintStats, LabelRecall};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSource {
    GoldEntity,
    Gazetteer,
    Pmi,
    Synthetic,
}

impl fmt::Display for ConstraintSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintSource::GoldEntity => "gold_entity",
            ConstraintSource::Gazetteer => "gazetteer",
            ConstraintSource::Pmi => "pmi",
            ConstraintSource::Synthetic => "synthetic",
        })
    }
}

impl FromStr for ConstraintSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "gold_entity" | "entity" => Ok(ConstraintSource::GoldEntity),
            "gazetteer" => Ok(ConstraintSource::Gazetteer),
            "pmi" => Ok(ConstraintSource::Pmi),
            "synthetic" | "synth" => Ok(ConstraintSource::Synthetic),
            other => Err(Error::Invalid(format!("unknown constraint source `{other}`"))),
        }
    }
}

/// A span asserted to be a constituent of sentence `sentence_id`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanConstraint {
    pub sentence_id: usize,
    pub span: Span,
    pub source: ConstraintSource,
}

impl SpanConstraint {
    pub fn new(sentence_id: usize, span: Span, source: ConstraintSource) -> Self {
        SpanConstraint {
            sentence_id,
            span,
            source,
        }
    }
}

/// Constraints grouped by sentence; at most one entry per `(sentence, span)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConstraintSet {
    by_sentence: BTreeMap<usize, BTreeMap<Span, ConstraintSource>>,
}

impl ConstraintSet {
    /// Returns false when the `(sentence, span)` pair was already present.
    pub fn insert(&mut self, c: SpanConstraint) -> bool {
        let spans = self.by_sentence.entry(c.sentence_id).or_default();
        if spans.contains_key(&c.span) {
            return false;
        }
        spans.insert(c.span, c.source);
        true
    }

    pub fn len(&self) -> usize {
        self.by_sentence.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Constraints ordered by sentence id, then span.
    pub fn iter(&self) -> impl Iterator<Item = SpanConstraint> + '_ {
        self.by_sentence.iter().flat_map(|(&sid, spans)| {
            spans
                .iter()
                .map(move |(&span, &source)| SpanConstraint::new(sid, span, source))
        })
    }

    pub fn for_sentence(&self, sentence_id: usize) -> BTreeSet<Span> {
        self.by_sentence
            .get(&sentence_id)
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn spans(&self, sentence_id: usize) -> Vec<Span> {
        self.by_sentence
            .get(&sentence_id)
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn has_constraints(&self, sentence_id: usize) -> bool {
        self.by_sentence.get(&sentence_id).is_some_and(|m| !m.is_empty())
    }

    pub fn sentence_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_sentence
            .iter()
            .filter(|(_, m)| !m.is_empty())
            .map(|(&id, _)| id)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&SpanConstraint) -> bool) {
        for (&sid, spans) in self.by_sentence.iter_mut() {
            spans.retain(|&span, &mut source| keep(&SpanConstraint::new(sid, span, source)));
        }
        self.by_sentence.retain(|_, m| !m.is_empty());
    }
}

impl FromIterator<SpanConstraint> for ConstraintSet {
    fn from_iter<I: IntoIterator<Item = SpanConstraint>>(iter: I) -> Self {
        let mut set = ConstraintSet::default();
        set.extend(iter);
        set
    }
}

impl Extend<SpanConstraint> for ConstraintSet {
    fn extend<I: IntoIterator<Item = SpanConstraint>>(&mut self, iter: I) {
        for c in iter {
            self.insert(c);
        }
    }
}
