use std::collections::HashMap;

use rayon::prelude::*;

use super::{ConstraintSet, ConstraintSource, SpanConstraint};
use crate::corpus::Sentence;
use crate::tree::Span;

#[derive(Debug, Default, Clone)]
struct TrieNode {
    children: HashMap<String, usize>,
    terminal: bool,
}

/// Token-level prefix trie over lowercased phrases.
#[derive(Debug, Clone)]
pub struct GazetteerIndex {
    nodes: Vec<TrieNode>,
    phrases: usize,
}

impl Default for GazetteerIndex {
    fn default() -> Self {
        GazetteerIndex {
            nodes: vec![TrieNode::default()],
            phrases: 0,
        }
    }
}

impl GazetteerIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_phrases<I, P, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[S]>,
        S: AsRef<str>,
    {
        let mut idx = Self::new();
        for p in phrases {
            idx.insert(p.as_ref());
        }
        idx
    }

    pub fn insert<S: AsRef<str>>(&mut self, phrase: &[S]) {
        if phrase.is_empty() {
            return;
        }
        let mut node = 0;
        for tok in phrase {
            let key = tok.as_ref().to_lowercase();
            node = match self.nodes[node].children.get(&key) {
                Some(&next) => next,
                None => {
                    self.nodes.push(TrieNode::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[node].children.insert(key, next);
                    next
                }
            };
        }
        if !self.nodes[node].terminal {
            self.nodes[node].terminal = true;
            self.phrases += 1;
        }
    }

    pub fn contains<S: AsRef<str>>(&self, phrase: &[S]) -> bool {
        let mut node = 0;
        for tok in phrase {
            match self.nodes[node].children.get(&tok.as_ref().to_lowercase()) {
                Some(&next) => node = next,
                None => return false,
            }
        }
        !phrase.is_empty() && self.nodes[node].terminal
    }

    pub fn len(&self) -> usize {
        self.phrases
    }

    pub fn is_empty(&self) -> bool {
        self.phrases == 0
    }

    /// End positions of every phrase starting at `start`.
    fn match_ends(&self, lowered: &[String], start: usize) -> Vec<usize> {
        let mut ends = Vec::new();
        let mut node = 0;
        for (offset, tok) in lowered[start..].iter().enumerate() {
            match self.nodes[node].children.get(tok) {
                Some(&next) => node = next,
                None => break,
            }
            if self.nodes[node].terminal {
                ends.push(start + offset + 1);
            }
        }
        ends
    }
}

/// Longest-match-wins, leftmost-on-ties selection of non-overlapping phrase
/// occurrences. Width-1 matches and the whole sentence are never returned.
pub fn match_lexicon<S: AsRef<str>>(tokens: &[S], index: &GazetteerIndex) -> Vec<Span> {
    let n = tokens.len();
    let lowered: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
    let mut candidates: Vec<Span> = (0..n)
        .flat_map(|i| {
            index
                .match_ends(&lowered, i)
                .into_iter()
                .map(move |j| Span::new(i, j))
        })
        .filter(|s| !s.is_trivial(n))
        .collect();
    candidates.sort_by(|a, b| b.width().cmp(&a.width()).then(a.start.cmp(&b.start)));
    let mut chosen: Vec<Span> = Vec::new();
    for c in candidates {
        if chosen.iter().all(|s| !s.overlaps(&c)) {
            chosen.push(c);
        }
    }
    chosen.sort();
    chosen
}

pub fn match_gazetteer(sentences: &[Sentence], gazetteer: &GazetteerIndex) -> ConstraintSet {
    match_with_source(sentences, gazetteer, ConstraintSource::Gazetteer)
}

pub(super) fn match_with_source(
    sentences: &[Sentence],
    index: &GazetteerIndex,
    source: ConstraintSource,
) -> ConstraintSet {
    let per_sentence: Vec<Vec<SpanConstraint>> = sentences
        .par_iter()
        .map(|s| {
            match_lexicon(&s.tokens, index)
                .into_iter()
                .map(|span| SpanConstraint::new(s.id, span, source))
                .collect()
        })
        .collect();
    per_sentence.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn index(phrases: &[&str]) -> GazetteerIndex {
        GazetteerIndex::from_phrases(phrases.iter().map(|p| toks(p)))
    }

    #[test]
    fn longest_match_wins() {
        let g = index(&["new york", "new york city"]);
        assert_eq!(match_lexicon(&toks("in new york city today"), &g), [Span::new(1, 4)]);
    }

    #[test]
    fn overlapping_candidates() {
        let g = index(&["san", "san jose"]);
        let got = match_lexicon(&toks("san jose airport"), &g);
        assert_eq!(got, [Span::new(0, 2)]);
        // The whole sentence is never a constraint.
        assert!(match_lexicon(&toks("san jose"), &g).is_empty());
    }

    #[test]
    fn no_match_and_case_insensitive() {
        let g = index(&["New York"]);
        assert!(match_lexicon(&toks("nothing here at all"), &g).is_empty());
        assert_eq!(match_lexicon(&toks("to NEW york now"), &g), [Span::new(1, 3)]);
    }

    #[test]
    fn longer_match_beats_earlier_overlap() {
        let g = index(&["a b", "b c d"]);
        assert_eq!(match_lexicon(&toks("a b c d e"), &g), [Span::new(1, 4)]);
        let g = index(&["a b", "c d"]);
        assert_eq!(match_lexicon(&toks("a b c d e"), &g), [Span::new(0, 2), Span::new(2, 4)]);
    }

    #[test]
    fn trie_counts_distinct_phrases() {
        let g = index(&["a b", "A B", "a"]);
        assert_eq!(g.len(), 2);
        assert!(g.contains(&toks("a B")));
        assert!(!g.contains(&toks("b")));
    }
}
