use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ConstraintSet, ConstraintSource, SpanConstraint};
use crate::corpus::Sentence;

/// Turns every gold constituent whose label is in `labels` into a constraint.
/// Width-1 and whole-sentence spans are skipped, as are sentences without a
/// gold tree.
pub fn synth_constraints(sentences: &[Sentence], labels: &BTreeSet<String>) -> ConstraintSet {
    let mut out = ConstraintSet::default();
    for s in sentences {
        let Some(tree) = &s.gold_tree else {
            log::warn!("sentence {} has no gold tree; skipped", s.id);
            continue;
        };
        for ls in tree.labeled_spans() {
            if labels.contains(&ls.label) && !ls.span.is_trivial(s.len()) {
                out.insert(SpanConstraint::new(s.id, ls.span, ConstraintSource::Synthetic));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Restricted {
    pub constraints: ConstraintSet,
    /// How many constraints short of `target_count` the result is.
    pub shortfall: usize,
}

/// Optionally removes nested constraints (keeping the outermost), then draws
/// a seeded uniform sample of `target_count` without replacement.
pub fn restrict_constraints(
    constraints: &ConstraintSet,
    target_count: usize,
    forbid_nesting: bool,
    seed: u64,
) -> Restricted {
    let mut pool: Vec<SpanConstraint> = constraints.iter().collect();
    if forbid_nesting {
        let all = constraints.clone();
        pool.retain(|c| {
            !all.spans(c.sentence_id)
                .iter()
                .any(|outer| outer.strictly_contains(&c.span))
        });
    }
    if target_count >= pool.len() {
        let shortfall = target_count - pool.len();
        if shortfall > 0 {
            log::warn!(
                "requested {target_count} constraints but only {} are available",
                pool.len()
            );
        }
        return Restricted {
            constraints: pool.into_iter().collect(),
            shortfall,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, pool.len(), target_count);
    Restricted {
        constraints: picked.into_iter().map(|i| pool[i]).collect(),
        shortfall: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_bracketed;
    use crate::tree::Span;

    fn labels(ls: &[&str]) -> BTreeSet<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    fn gold_sentence(line: &str) -> Sentence {
        let (tokens, tree) = parse_bracketed(line).unwrap();
        let mut s = Sentence::new(0, tokens);
        s.gold_tree = Some(tree);
        s
    }

    #[test]
    fn synth_by_label() {
        let s = vec![gold_sentence("(S (NP (DT the) (NN cat)) (VP sat))")];
        assert_eq!(synth_constraints(&s, &labels(&["NP"])).spans(0), [Span::new(0, 2)]);
        assert_eq!(synth_constraints(&s, &labels(&["NP", "VP"])).spans(0), [Span::new(0, 2)]);
        assert!(synth_constraints(&s, &labels(&[])).is_empty());
        let no_gold = vec![Sentence::new(0, vec!["a".into(), "b".into()])];
        assert!(synth_constraints(&no_gold, &labels(&["NP"])).is_empty());
    }

    #[test]
    fn nesting_keeps_outermost() {
        let set: ConstraintSet = [(0, 4), (1, 3)]
            .into_iter()
            .map(|(a, b)| SpanConstraint::new(0, Span::new(a, b), ConstraintSource::Synthetic))
            .collect();
        let r = restrict_constraints(&set, 10, true, 0);
        assert_eq!(r.constraints.spans(0), [Span::new(0, 4)]);
        assert_eq!(r.shortfall, 9);
    }

    #[test]
    fn downsample_is_seeded() {
        let set: ConstraintSet = (0..100)
            .map(|i| SpanConstraint::new(i, Span::new(0, 2), ConstraintSource::Synthetic))
            .collect();
        let a = restrict_constraints(&set, 50, false, 7);
        let b = restrict_constraints(&set, 50, false, 7);
        assert_eq!(a.constraints.len(), 50);
        assert_eq!(a, b);
        assert!(restrict_constraints(&set, 0, false, 7).constraints.is_empty());
    }
}
