use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::gazetteer::{match_with_source, GazetteerIndex};
use super::{ConstraintSet, ConstraintSource};
use crate::corpus::Sentence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmiConfig {
    pub passes: usize,
    /// Merge threshold. `None` means `1e-3 * N` with `N` the corpus token count.
    pub delta: Option<f64>,
    /// Count discount subtracted from every bigram count.
    pub min_count: f64,
}

impl Default for PmiConfig {
    fn default() -> Self {
        PmiConfig {
            passes: 2,
            delta: None,
            min_count: 5.0,
        }
    }
}

/// Multi-token phrases produced by iterative bigram merging.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PmiLexicon {
    pub phrases: BTreeSet<Vec<String>>,
    pub delta: f64,
    pub passes: usize,
}

impl PmiLexicon {
    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn to_index(&self) -> GazetteerIndex {
        GazetteerIndex::from_phrases(self.phrases.iter())
    }
}

/// `(count(ab) - min_count) / (count(a) * count(b)) * total`.
pub fn pair_score(count_ab: f64, count_a: f64, count_b: f64, total: f64, min_count: f64) -> f64 {
    (count_ab - min_count) / (count_a * count_b) * total
}

struct Interner {
    ids: HashMap<Vec<String>, u32>,
    units: Vec<Vec<String>>,
}

impl Interner {
    fn intern(&mut self, unit: Vec<String>) -> u32 {
        if let Some(&id) = self.ids.get(&unit) {
            return id;
        }
        let id = self.units.len() as u32;
        self.ids.insert(unit.clone(), id);
        self.units.push(unit);
        id
    }
}

/// Repeatedly merges adjacent unit pairs whose discounted PMI-style score
/// exceeds the threshold. The lexicon holds every multi-token unit left in
/// the corpus after the final pass. Matching is case-insensitive, so the
/// corpus is lowercased first.
pub fn induce_pmi_phrases(corpus: &[Sentence], config: &PmiConfig) -> PmiLexicon {
    let token_count: usize = corpus.iter().map(Sentence::len).sum();
    let delta = config.delta.unwrap_or(1e-3 * token_count as f64);
    let mut lexicon = PmiLexicon {
        phrases: BTreeSet::new(),
        delta,
        passes: config.passes,
    };
    if token_count == 0 {
        return lexicon;
    }

    let mut interner = Interner {
        ids: HashMap::new(),
        units: Vec::new(),
    };
    let mut text: Vec<Vec<u32>> = corpus
        .iter()
        .map(|s| {
            s.tokens
                .iter()
                .map(|t| interner.intern(vec![t.to_lowercase()]))
                .collect()
        })
        .collect();

    for pass in 0..config.passes {
        let mut unigrams: HashMap<u32, f64> = HashMap::new();
        let mut bigrams: HashMap<(u32, u32), f64> = HashMap::new();
        let mut total = 0.0;
        for sent in &text {
            for (i, &u) in sent.iter().enumerate() {
                *unigrams.entry(u).or_default() += 1.0;
                total += 1.0;
                if let Some(&v) = sent.get(i + 1) {
                    *bigrams.entry((u, v)).or_default() += 1.0;
                }
            }
        }
        let merges: HashSet<(u32, u32)> = bigrams
            .iter()
            .filter(|(&(a, b), &cab)| {
                pair_score(cab, unigrams[&a], unigrams[&b], total, config.min_count) > delta
            })
            .map(|(&pair, _)| pair)
            .collect();
        log::debug!("pmi pass {}: {} merges", pass + 1, merges.len());
        if merges.is_empty() {
            break;
        }
        for sent in text.iter_mut() {
            let mut merged = Vec::with_capacity(sent.len());
            let mut i = 0;
            while i < sent.len() {
                if i + 1 < sent.len() && merges.contains(&(sent[i], sent[i + 1])) {
                    let mut unit = interner.units[sent[i] as usize].clone();
                    unit.extend(interner.units[sent[i + 1] as usize].iter().cloned());
                    merged.push(interner.intern(unit));
                    i += 2;
                } else {
                    merged.push(sent[i]);
                    i += 1;
                }
            }
            *sent = merged;
        }
    }

    for sent in &text {
        for &u in sent {
            let unit = &interner.units[u as usize];
            if unit.len() >= 2 {
                lexicon.phrases.insert(unit.clone());
            }
        }
    }
    lexicon
}

/// Same contract as gazetteer matching, with the PMI lexicon as phrase source.
pub fn match_pmi(sentences: &[Sentence], lexicon: &PmiLexicon) -> ConstraintSet {
    match_with_source(sentences, &lexicon.to_index(), ConstraintSource::Pmi)
}
