//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! The end-to-end criteria train six models on one core; expect roughly
//! twenty minutes in the test profile.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsdiora::chart::{mix_scores, Chart};
use dsdiora::constraints::{induce_pmi_phrases, PmiConfig};
use dsdiora::decode::{ccky, cky, enumerate_trees, tree_score, CckyMode};
use dsdiora::diff::{grad_check, ModelParams, ParamInit};
use dsdiora::eval::{binarized_upper_bound, constraint_recall, corpus_f1, sentence_f1, span_f1, Branching, PunctPolicy};
use dsdiora::objective::{
    instance_loss, instance_loss_and_grad, ps_svm_grad, satisfaction_count, ObjectiveConfig, PsSvmConfig,
    PsSvmVariant,
};
use dsdiora::synth::{default_entities, default_grammar, generate, split_corpus, SynthConfig};
use dsdiora::train::{predict, train, Init, TrainConfig, TrainData, TrainOutput};
use dsdiora::corpus::LabeledSpan;
use dsdiora::{BinaryTree, GoldTree, Sentence, Span, Vocab};

mod common;
use common::{naive_f1, phrases, random_binary, random_gold, text_corpus};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn random_chart(n: usize, dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Chart {
    let p = ModelParams::init(10, dim, ParamInit { seed: rng.gen(), scale });
    let toks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..10)).collect();
    Chart::inside(&toks, &p, 40).unwrap()
}

fn random_span(n: usize, rng: &mut ChaCha8Rng) -> Span {
    loop {
        let w = rng.gen_range(2..=n);
        let i = rng.gen_range(0..=n - w);
        let s = Span::new(i, i + w);
        if !s.is_trivial(n) {
            return s;
        }
    }
}

/// A crossing pair `(a,b), (c,d)` with `a < c < b < d`, plus random extras.
fn crossing_constraints(n: usize, rng: &mut ChaCha8Rng) -> BTreeSet<Span> {
    let mut z = BTreeSet::new();
    loop {
        let mut cut: Vec<usize> = (0..4).map(|_| rng.gen_range(0..=n)).collect();
        cut.sort();
        let (a, c, b, d) = (cut[0], cut[1], cut[2], cut[3]);
        if a < c && c < b && b < d {
            let (x, y) = (Span::new(a, b), Span::new(c, d));
            if x.width() >= 2 && y.width() >= 2 && !x.is_trivial(n) && !y.is_trivial(n) {
                z.insert(x);
                z.insert(y);
                break;
            }
        }
    }
    for _ in 0..rng.gen_range(0..3) {
        z.insert(random_span(n, rng));
    }
    z
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut charts = 0;
    for n in 3..=8 {
        let trees = enumerate_trees(n).unwrap();
        for _ in 0..100 {
            let chart = random_chart(n, 8, 1.0, &mut rng);
            let best = tree_score(&cky(&chart), &chart).unwrap();
            let max = trees.iter().map(|t| tree_score(t, &chart).unwrap()).fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max((best - max).abs());
            charts += 1;
        }
    }
    let took = start.elapsed();
    verdict(
        worst <= 1e-9 && took < Duration::from_secs(60),
        format!("{charts} charts, max |cky - enumerated max| = {worst:.1e} (tol 1e-9), {:.1}s (limit 60s)", took.as_secs_f64()),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut g_bad, mut worst, mut checked) = (0, 0.0f64, 0);
    for n in 3..=8 {
        let trees = enumerate_trees(n).unwrap();
        for _ in 0..100 {
            let chart = random_chart(n, 8, 1.0, &mut rng);
            let z = crossing_constraints(n, &mut rng);
            let got = ccky(&chart, &z, CckyMode::Lexicographic);
            let g_max = trees.iter().map(|t| satisfaction_count(t, &z)).max().unwrap();
            let s_max = trees
                .iter()
                .filter(|t| satisfaction_count(t, &z) == g_max)
                .map(|t| tree_score(t, &chart).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            if satisfaction_count(&got, &z) != g_max {
                g_bad += 1;
            }
            worst = worst.max((tree_score(&got, &chart).unwrap() - s_max).abs());
            checked += 1;
        }
    }
    verdict(
        g_bad == 0 && worst <= 1e-9,
        format!("{checked} charts with crossing pairs, {g_bad} with sub-maximal g, max score gap {worst:.1e} (tol 1e-9)"),
    )
}

fn objective(variant: PsSvmVariant) -> ObjectiveConfig {
    ObjectiveConfig {
        ps: PsSvmConfig {
            variant,
            ..PsSvmConfig::default()
        },
        ..ObjectiveConfig::default()
    }
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for variant in PsSvmVariant::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::init(6, 4, ParamInit { seed: 3, scale: 0.5 });
        let tokens: Vec<usize> = (0..5).map(|_| rng.gen_range(0..6)).collect();
        let tree = cky(&Chart::inside(&tokens, &p, 40).unwrap());
        let z: BTreeSet<Span> = loop {
            let s = random_span(5, &mut rng);
            if !tree.contains(s) {
                break [s].into_iter().collect();
            }
        };
        let cfg = objective(variant);
        let active = instance_loss(&tokens, &z, &p, &cfg).unwrap().ps.map_or(false, |o| o.loss > 0.0);
        let mut scratch = p.clone();
        let report = grad_check(
            |theta| {
                scratch.assign_flat(theta);
                let mut g = scratch.zeros_like();
                let l = instance_loss_and_grad(&tokens, &z, &scratch, &cfg, 1.0, &mut g).unwrap();
                (l.total, g.flatten())
            },
            &p.flatten(),
            1e-5,
            1e-4,
        );
        pass &= active && report.checked == p.num_values() && report.max_rel_error < 1e-4;
        parts.push(format!("{variant} {:.1e}", report.max_rel_error));
    }
    let took = start.elapsed();
    pass &= took < Duration::from_secs(60);
    verdict(
        pass,
        format!("max rel error {} (tol 1e-4, eps 1e-5), {:.1}s (limit 60s)", parts.join(", "), took.as_secs_f64()),
    )
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut nonzero = 0;
    let mut instances = 0;
    for variant in [PsSvmVariant::Ncbl, PsSvmVariant::MinDifference, PsSvmVariant::Rescale] {
        for _ in 0..50 {
            let p = ModelParams::init(8, 4, ParamInit { seed: rng.gen(), scale: 0.7 });
            let n = rng.gen_range(3..10);
            let tokens: Vec<usize> = (0..n).map(|_| rng.gen_range(0..8)).collect();
            let tree = cky(&Chart::inside(&tokens, &p, 40).unwrap());
            let mut z: BTreeSet<Span> = tree.spans().into_iter().filter(|s| !s.is_trivial(n) && rng.gen_bool(0.5)).collect();
            if z.is_empty() {
                z.insert(tree.spans().into_iter().find(|s| !s.is_trivial(n)).unwrap());
            }
            let (_, g) = ps_svm_grad(&tokens, &z, &p, &objective(variant)).unwrap();
            if !g.is_all_zero() {
                nonzero += 1;
            }
            instances += 1;
        }
    }
    verdict(nonzero == 0, format!("{instances} instances (50 per variant), {nonzero} with a non-zero gradient"))
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_sum, mut worst_shift) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.gen_range(2..=9);
        let dim = 4;
        let p = ModelParams::init(10, dim, ParamInit { seed: rng.gen(), scale: rng.gen_range(0.5..3.0) });
        let toks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..10)).collect();
        let chart = Chart::encode(&toks, &p, 40).unwrap();
        for w in 1..=n {
            for i in 0..=n - w {
                let span = Span::new(i, i + w);
                if w >= 2 {
                    worst_sum = worst_sum.max((chart.split_weights(span).iter().sum::<f64>() - 1.0).abs());
                }
                if w < n {
                    worst_sum = worst_sum.max((chart.outside_weights(span).iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
        let span = if n == 2 { Span::new(0, 2) } else { random_span(n, &mut rng) };
        let c = rng.gen_range(-50.0..50.0);
        let shifted: Vec<f64> = chart.split_scores(span).iter().map(|r| r + c).collect();
        let (a, _, _) = mix_scores(&shifted, chart.split_vectors(span), dim);
        for (x, y) in a.iter().zip(chart.split_weights(span)) {
            worst_shift = worst_shift.max((x - y).abs());
        }
    }
    verdict(
        worst_sum <= 1e-9 && worst_shift <= 1e-9,
        format!("1000 charts, max |sum a - 1| = {worst_sum:.1e}, max shift change = {worst_shift:.1e} (tol 1e-9)"),
    )
}

/// Held-out measurements of one model.
#[derive(Clone, Copy, Debug)]
struct Scores {
    f1: f64,
    recall: f64,
    f1_unconstrained: f64,
    f1_ccky: f64,
}

struct Run {
    base: Scores,
    ps: Scores,
    took: Duration,
}

fn scores(params: &ModelParams, vocab: &Vocab, test: &[Sentence], z: &dsdiora::ConstraintSet) -> Scores {
    let ids: Vec<usize> = test.iter().map(|s| s.id).collect();
    let free: Vec<Sentence> = test.iter().filter(|s| !z.has_constraints(s.id)).cloned().collect();
    let plain = predict(params, vocab, test, None, CckyMode::Lexicographic).unwrap();
    let forced = predict(params, vocab, test, Some(z), CckyMode::Lexicographic).unwrap();
    let plain_free = predict(params, vocab, &free, None, CckyMode::Lexicographic).unwrap();
    Scores {
        f1: corpus_f1(&plain, test, PunctPolicy::Auto).unwrap(),
        recall: constraint_recall(&plain, &ids, z).unwrap(),
        f1_unconstrained: corpus_f1(&plain_free, &free, PunctPolicy::Auto).unwrap(),
        f1_ccky: corpus_f1(&forced, test, PunctPolicy::Auto).unwrap(),
    }
}

/// Reconstruction-only baseline followed by Rescale training, with metric
/// logs written under `dir`.
fn end_to_end(seed: u64, dir: &Path) -> Run {
    let start = Instant::now();
    let corpus = generate(
        &default_grammar(),
        &default_entities(),
        &SynthConfig {
            n_sentences: 2000,
            seed,
            constraint_fraction: 0.5,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let ((train_set, train_z), (test, test_z)) = split_corpus(&corpus, 1700);
    let vocab = Vocab::build(&train_set, 10_000, 1);
    let base_cfg = TrainConfig {
        seed,
        dim: 32,
        max_epochs: 20,
        ps_weight: 0.0,
        variant: PsSvmVariant::Rescale,
        val_sample: Some(100),
        ..TrainConfig::default()
    };
    let data = TrainData {
        train: &train_set,
        constraints: &train_z,
        valid: &train_set,
        valid_constraints: Some(&train_z),
    };
    let base = train(&data, &vocab, &base_cfg, Init::Random, Some(&TrainOutput { dir: dir.join("baseline") })).unwrap();
    let ps_cfg = TrainConfig {
        ps_weight: 1.0,
        ..base_cfg
    };
    let ps = train(
        &data,
        &vocab,
        &ps_cfg,
        Init::Params(base.best_params.clone()),
        Some(&TrainOutput { dir: dir.join("ps") }),
    )
    .unwrap();
    Run {
        base: scores(&base.best_params, &vocab, &test, &test_z),
        ps: scores(&ps.best_params, &vocab, &test, &test_z),
        took: start.elapsed(),
    }
}

fn criterion_6(runs: &[Run]) -> Verdict {
    let mut wins = 0;
    let mut parts = Vec::new();
    for (seed, r) in SEEDS.iter().zip(runs) {
        let d_recall = r.ps.recall - r.base.recall;
        let d_f1 = r.ps.f1 - r.base.f1;
        let d_free = r.ps.f1_unconstrained - r.base.f1_unconstrained;
        let ok = d_recall >= 10.0 && d_f1 >= 2.0 && d_free > 0.0;
        wins += usize::from(ok);
        parts.push(format!(
            "seed {seed}: recall {:.1}->{:.1}, F1 {:.1}->{:.1}, unconstrained F1 {:.1}->{:.1}",
            r.base.recall, r.ps.recall, r.base.f1, r.ps.f1, r.base.f1_unconstrained, r.ps.f1_unconstrained
        ));
    }
    let total: Duration = runs.iter().map(|r| r.took).sum();
    verdict(
        wins * 2 > runs.len() && total <= Duration::from_secs(30 * 60),
        format!(
            "{wins}/{} seeds pass (recall +10, F1 +2, unconstrained F1 up); {}; {:.0}s total (limit 1800s)",
            runs.len(),
            parts.join("; "),
            total.as_secs_f64()
        ),
    )
}

fn criterion_7(runs: &[Run]) -> Verdict {
    let mut wins = 0;
    let mut parts = Vec::new();
    for (seed, r) in SEEDS.iter().zip(runs) {
        wins += usize::from(r.ps.f1 >= r.base.f1_ccky);
        parts.push(format!("seed {seed}: {:.1} vs {:.1}", r.ps.f1, r.base.f1_ccky));
    }
    verdict(
        wins * 2 > runs.len(),
        format!("{wins}/{} seeds with trained+CKY >= baseline+CCKY; {}", runs.len(), parts.join("; ")),
    )
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut naive_sums = [0.0; 3];
    let policies = [PunctPolicy::None, PunctPolicy::Pos, PunctPolicy::Chars];
    for _ in 0..200 {
        let n = rng.gen_range(1..15);
        let gold = random_gold(n, &mut rng);
        let pred = random_binary(n, &mut rng);
        let tree = gold.gold_tree.as_ref().unwrap();
        let tags = tree.pos_tags().unwrap().to_vec();
        for (k, policy) in policies.into_iter().enumerate() {
            let keep: Vec<bool> = match policy {
                PunctPolicy::None => vec![true; n],
                _ => tags.iter().map(|t| t != ",").collect(),
            };
            let want = naive_f1(&pred.spans(), tree, &keep);
            worst = worst.max((want - sentence_f1(&pred, &gold, policy).unwrap()).abs());
            naive_sums[k] += want;
        }
        preds.push(pred);
        golds.push(gold);
    }
    for (k, policy) in policies.into_iter().enumerate() {
        worst = worst.max((corpus_f1(&preds, &golds, policy).unwrap() - naive_sums[k] / 200.0).abs());
    }

    let set = |v: &[(usize, usize)]| v.iter().map(|&(a, b)| Span::new(a, b)).collect::<BTreeSet<_>>();
    let fifty = span_f1(&set(&[(0, 2), (2, 5)]), &set(&[(0, 2), (3, 5)]));
    let spans = vec![
        LabeledSpan { span: Span::new(0, 4), label: "S".into() },
        LabeledSpan { span: Span::new(0, 2), label: "NP".into() },
    ];
    let mut ternary = Sentence::new(0, ["a", "b", "c", "d"].map(String::from).to_vec());
    ternary.gold_tree = Some(GoldTree::new(4, spans, None).unwrap());
    let ub = binarized_upper_bound(&[ternary], Branching::Right, PunctPolicy::None).unwrap();
    let binary_is_exact = {
        let t = BinaryTree::from_spans(4, &set(&[(0, 4), (0, 2), (2, 4)])).unwrap();
        let mut s = Sentence::new(0, ["a", "b", "c", "d"].map(String::from).to_vec());
        s.gold_tree = Some(
            GoldTree::new(
                4,
                [(0, 4), (0, 2), (2, 4)].map(|(a, b)| LabeledSpan { span: Span::new(a, b), label: "X".into() }).to_vec(),
                None,
            )
            .unwrap(),
        );
        sentence_f1(&t, &s, PunctPolicy::None).unwrap() == 100.0
    };
    verdict(
        worst <= 1e-9 && fifty == 50.0 && ub == 200.0 / 3.0 && format!("{ub:.1}") == "66.7" && binary_is_exact,
        format!("200 pairs x 3 policies, max deviation {worst:.1e} (tol 1e-9); hand examples {fifty} and {ub:.1}"),
    )
}

fn criterion_9() -> Verdict {
    let cfg = |passes| PmiConfig {
        passes,
        delta: Some(3.0),
        min_count: 0.0,
    };
    let la = text_corpus(&[(100, "the the los angeles the the")]);
    let ny = text_corpus(&[
        (50, "the new york city the"),
        (50, "the new york the"),
        (100, "the york the"),
        (50, "the city the"),
    ]);
    let checks = [
        (induce_pmi_phrases(&la, &cfg(1)).phrases == phrases(&["los angeles"]), "los angeles, 1 pass"),
        (induce_pmi_phrases(&la, &cfg(2)).phrases == phrases(&["los angeles"]), "los angeles, 2 passes"),
        (induce_pmi_phrases(&ny, &cfg(1)).phrases == phrases(&["new york"]), "new york, 1 pass"),
        (
            induce_pmi_phrases(&ny, &cfg(2)).phrases == phrases(&["new york", "new york city"]),
            "new york city, 2 passes",
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.0).map(|c| c.1).collect();
    verdict(
        failed.is_empty(),
        if failed.is_empty() {
            "2 forced-count corpora x {1, 2} passes induce exactly the expected phrases".into()
        } else {
            format!("wrong lexicon for: {}", failed.join(", "))
        },
    )
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_default()
}

fn criterion_10(first: &Path, second: &Path, a: &Run, b: &Run) -> Verdict {
    let mut same = true;
    let mut lines = 0;
    for phase in ["baseline", "ps"] {
        let (x, y) = (read(&first.join(phase).join("metrics.log")), read(&second.join(phase).join("metrics.log")));
        same &= !x.is_empty() && x == y;
        lines += x.iter().filter(|c| **c == b'\n').count();
        same &= read(&first.join(phase).join("best.ckpt")) == read(&second.join(phase).join("best.ckpt"));
    }
    same &= a.ps.f1.to_bits() == b.ps.f1.to_bits() && a.base.f1.to_bits() == b.base.f1.to_bits();
    verdict(
        same,
        format!(
            "seed {} run twice: {lines} metric log lines {} byte-for-byte, checkpoints {}",
            SEEDS[0],
            if same { "identical" } else { "differ" },
            if same { "identical" } else { "or scores differ" }
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut emit = |id: usize, name: &'static str, v: Verdict| {
        println!("{} criterion {id:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };
    emit(1, "decoder oracle equivalence", criterion_1());
    emit(2, "CCKY dominance", criterion_2());
    emit(3, "gradient fidelity", criterion_3());
    emit(4, "zero gradient when satisfied", criterion_4());
    emit(5, "chart normalization and shift invariance", criterion_5());

    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<Run> = SEEDS.iter().map(|&s| end_to_end(s, &tmp.path().join(format!("seed{s}")))).collect();
    emit(6, "synthetic end-to-end", criterion_6(&runs));
    emit(7, "training beats test-time injection", criterion_7(&runs));
    emit(8, "evaluation correctness", criterion_8());
    emit(9, "PMI induction", criterion_9());
    let again = tmp.path().join("again");
    let rerun = end_to_end(SEEDS[0], &again);
    emit(10, "determinism", criterion_10(&tmp.path().join(format!("seed{}", SEEDS[0])), &again, &runs[0], &rerun));

    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
