use std::collections::BTreeSet;

use proptest::prelude::*;

use dsdiora::constraints::{match_lexicon, GazetteerIndex};
use dsdiora::decode::{ccky, cky, tree_score, CckyMode, ScoreTable};
use dsdiora::eval::span_f1;
use dsdiora::objective::satisfaction_count;
use dsdiora::{BinaryTree, Span};

fn table(n: usize, values: &[f64]) -> ScoreTable {
    let mut i = 0;
    ScoreTable::from_fn(n, |_, _| {
        i += 1;
        values[i % values.len()]
    })
}

fn spans_strategy(n: usize) -> impl Strategy<Value = BTreeSet<Span>> {
    proptest::collection::btree_set((0..n, 2..=n), 0..4).prop_map(move |v| {
        v.into_iter()
            .filter_map(|(i, w)| (i + w <= n).then(|| Span::new(i, i + w)))
            .collect()
    })
}

proptest! {
    #[test]
    fn decoded_trees_are_full_binary(n in 1usize..10, values in proptest::collection::vec(-3.0f64..3.0, 1..40)) {
        let t = table(n, &values);
        let tree = cky(&t);
        prop_assert_eq!(tree.spans().len(), n.saturating_sub(1));
        prop_assert!(tree.contains(Span::new(0, n)));
        let rebuilt = BinaryTree::from_spans(n, &tree.spans()).unwrap();
        prop_assert_eq!(rebuilt, tree);
    }

    #[test]
    fn ccky_never_satisfies_fewer_than_cky(
        (n, z) in (2usize..9).prop_flat_map(|n| (Just(n), spans_strategy(n))),
        values in proptest::collection::vec(-3.0f64..3.0, 1..40),
    ) {
        let t = table(n, &values);
        let plain = cky(&t);
        let c = ccky(&t, &z, CckyMode::Lexicographic);
        prop_assert!(satisfaction_count(&c, &z) >= satisfaction_count(&plain, &z));
        prop_assert!(tree_score(&c, &t).unwrap() <= tree_score(&plain, &t).unwrap() + 1e-12);
        // Adding already-satisfied constraints changes nothing.
        let sat: BTreeSet<Span> = plain.spans().into_iter().filter(|s| !s.is_trivial(n)).collect();
        prop_assert_eq!(ccky(&t, &sat, CckyMode::Lexicographic), plain);
    }

    #[test]
    fn f1_bounded_and_exact_on_equality(a in proptest::collection::btree_set((0usize..8, 1usize..8), 0..6),
                                        b in proptest::collection::btree_set((0usize..8, 1usize..8), 1..6)) {
        let to = |s: &BTreeSet<(usize, usize)>| s.iter().map(|&(i, w)| Span::new(i, i + w)).collect::<BTreeSet<_>>();
        let (pa, gb) = (to(&a), to(&b));
        let f = span_f1(&pa, &gb);
        prop_assert!((0.0..=100.0).contains(&f));
        prop_assert_eq!(span_f1(&gb, &gb), 100.0);
        if f == 100.0 {
            prop_assert_eq!(pa, gb);
        }
    }

    #[test]
    fn gazetteer_matches_do_not_overlap(words in proptest::collection::vec(0usize..4, 1..20)) {
        let vocab = ["new", "york", "city", "the"];
        let tokens: Vec<&str> = words.iter().map(|&w| vocab[w]).collect();
        let idx = GazetteerIndex::from_phrases([vec!["new", "york"], vec!["new", "york", "city"], vec!["york", "city"]]);
        let found = match_lexicon(&tokens, &idx);
        for (i, a) in found.iter().enumerate() {
            prop_assert!(a.width() >= 2 && !a.is_trivial(tokens.len()));
            for b in &found[i + 1..] {
                prop_assert!(!a.overlaps(b));
            }
        }
    }
}
