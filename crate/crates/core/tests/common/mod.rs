//! Oracles shared by several test targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use dsdiora::corpus::LabeledSpan;
use dsdiora::decode::{cky, ScoreTable};
use dsdiora::{BinaryTree, GoldTree, Sentence, Span};

pub fn random_binary(n: usize, rng: &mut ChaCha8Rng) -> BinaryTree {
    let t = ScoreTable::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    cky(&t)
}

/// Random n-ary tree: a random binary tree with some internal nodes removed.
pub fn random_gold(n: usize, rng: &mut ChaCha8Rng) -> Sentence {
    let b = random_binary(n, rng);
    let mut spans = vec![LabeledSpan {
        span: Span::new(0, n),
        label: "S".into(),
    }];
    for s in b.spans() {
        if s.width() < n && rng.gen_bool(0.6) {
            spans.push(LabeledSpan {
                span: s,
                label: "X".into(),
            });
        }
    }
    let tags: Vec<String> = (0..n)
        .map(|_| if rng.gen_bool(0.2) { ",".to_owned() } else { "NN".to_owned() })
        .collect();
    let tokens: Vec<String> = tags.iter().enumerate().map(|(i, t)| if t == "," { ",".into() } else { format!("w{i}") }).collect();
    let mut s = Sentence::new(0, tokens);
    s.gold_tree = Some(GoldTree::new(n, spans, Some(tags)).unwrap());
    s
}

pub fn naive_f1(pred: &BTreeSet<Span>, gold: &GoldTree, keep: &[bool]) -> f64 {
    let kept = keep.iter().filter(|k| **k).count();
    let remap = |s: &Span| {
        let a = keep[..s.start].iter().filter(|k| **k).count();
        let b = keep[..s.end].iter().filter(|k| **k).count();
        (a, b)
    };
    let clean = |spans: Vec<Span>| -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = spans
            .iter()
            .map(remap)
            .filter(|(a, b)| b - a >= 2 && !(*a == 0 && *b == kept))
            .collect();
        out.sort();
        out.dedup();
        out
    };
    let p = clean(pred.iter().copied().collect());
    let g = clean(gold.labeled_spans().iter().map(|l| l.span).collect());
    if g.is_empty() {
        return 100.0;
    }
    let hit = p.iter().filter(|s| g.contains(s)).count() as f64;
    if hit == 0.0 {
        return 0.0;
    }
    let (pr, re) = (hit / p.len() as f64, hit / g.len() as f64);
    200.0 * pr * re / (pr + re)
}

/// Sentences built from `(count, text)` pairs, numbered in order.
pub fn text_corpus(parts: &[(usize, &str)]) -> Vec<Sentence> {
    let mut out = Vec::new();
    for &(count, text) in parts {
        for _ in 0..count {
            let tokens = text.split_whitespace().map(str::to_owned).collect();
            out.push(Sentence::new(out.len(), tokens));
        }
    }
    out
}

pub fn phrases(list: &[&str]) -> BTreeSet<Vec<String>> {
    list.iter()
        .map(|p| p.split_whitespace().map(str::to_owned).collect())
        .collect()
}
