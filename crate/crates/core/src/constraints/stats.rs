use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use super::ConstraintSet;
use crate::corpus::Sentence;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelRecall {
    pub label: String,
    pub gold_count: usize,
    pub found: usize,
    pub percent: f64,
}

/// Agreement of a constraint set with reference trees.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintStats {
    /// Constraints on sentences that have a gold tree.
    pub count: usize,
    pub sentences_with_constraints: usize,
    /// Percent of constraints that are gold constituents.
    pub exact_match: f64,
    /// Percent of constraints crossing at least one gold constituent.
    pub crossing: f64,
    pub per_label: Vec<LabelRecall>,
}

pub fn constraint_stats(constraints: &ConstraintSet, sentences: &[Sentence]) -> ConstraintStats {
    let mut count = 0usize;
    let mut matched = 0usize;
    let mut crossing = 0usize;
    let mut covered = 0usize;
    let mut per_label: BTreeMap<String, (usize, usize)> = BTreeMap::new();

    for s in sentences {
        let Some(tree) = &s.gold_tree else { continue };
        let z = constraints.for_sentence(s.id);
        if !z.is_empty() {
            covered += 1;
        }
        let gold = tree.span_set();
        for c in &z {
            count += 1;
            if gold.contains(c) {
                matched += 1;
            } else if gold.iter().any(|g| g.crosses(c)) {
                crossing += 1;
            }
        }
        for ls in tree.labeled_spans() {
            if ls.span.is_trivial(s.len()) {
                continue;
            }
            let entry = per_label.entry(ls.label.clone()).or_default();
            entry.0 += 1;
            if z.contains(&ls.span) {
                entry.1 += 1;
            }
        }
    }

    let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    ConstraintStats {
        count,
        sentences_with_constraints: covered,
        exact_match: pct(matched, count),
        crossing: pct(crossing, count),
        per_label: per_label
            .into_iter()
            .map(|(label, (gold_count, found))| LabelRecall {
                label,
                gold_count,
                found,
                percent: pct(found, gold_count),
            })
            .collect(),
    }
}

impl ConstraintStats {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>10}", "constraints (n^z)", self.count);
        let _ = writeln!(out, "{:<24} {:>10}", "sentences with z", self.sentences_with_constraints);
        let _ = writeln!(out, "{:<24} {:>10.1}", "exact match (EM %)", self.exact_match);
        let _ = writeln!(out, "{:<24} {:>10.1}", "crossing (C %)", self.crossing);
        if !self.per_label.is_empty() {
            let _ = writeln!(out, "\n{:<12} {:>10} {:>10} {:>8}", "label", "gold", "found", "%");
            for l in &self.per_label {
                let _ = writeln!(
                    out,
                    "{:<12} {:>10} {:>10} {:>8.1}",
                    l.label, l.gold_count, l.found, l.percent
                );
            }
        }
        out
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_z={}", self.count);
        let _ = writeln!(out, "sentences_with_z={}", self.sentences_with_constraints);
        let _ = writeln!(out, "EM={:.6}", self.exact_match);
        let _ = writeln!(out, "C={:.6}", self.crossing);
        for l in &self.per_label {
            let _ = writeln!(out, "label.{}.gold={}", l.label, l.gold_count);
            let _ = writeln!(out, "label.{}.recall={:.6}", l.label, l.percent);
        }
        out
    }
}
