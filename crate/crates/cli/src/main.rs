use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dsdiora::constraints::{
    constraint_stats, induce_pmi_phrases, match_gazetteer, match_pmi, restrict_constraints, synth_constraints,
    GazetteerIndex, PmiConfig,
};
use dsdiora::corpus::{
    load_constraints, load_corpus, load_phrases, validate_constraints, write_constraints, write_gold, write_phrases,
    write_predictions, write_tokens, CorpusFormat,
};
use dsdiora::diff::{grad_check, ParamInit};
use dsdiora::eval::{binarized_upper_bound, bucket_report, constraint_recall, corpus_f1, Branching, EvalReport, PunctPolicy};
use dsdiora::objective::{instance_loss, instance_loss_and_grad, ObjectiveConfig, PsSvmConfig};
use dsdiora::synth::{default_entities, default_grammar, generate, split_corpus, Grammar, SynthConfig};
use dsdiora::train::{load_model, load_state, predict, summarize, train, Init, TrainConfig, TrainData, TrainOutput};
use dsdiora::{
    cky, BinaryTree, CckyMode, Chart, ConstraintSet, ConstraintSource, Error, ModelParams, PsSvmVariant, Sentence, Span,
    Vocab,
};

mod manifest;
use manifest::{hash_of, load_config, read_sidecar, sidecar, Manifest};

#[derive(Parser)]
#[command(name = "dsdiora", version, about = "Latent tree induction with span-constraint supervision")]
struct Cli {
    /// Worker threads for sentence-level parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine span constraints from a corpus.
    ExtractConstraints(ExtractArgs),
    /// Train a model; writes checkpoints and a metrics log into --out.
    Train(TrainArgs),
    /// Decode a corpus with a trained model.
    Parse(ParseArgs),
    /// Score predictions against gold trees.
    Eval(EvalArgs),
    /// Agreement statistics of a constraint set with gold trees.
    Stats(StatsArgs),
    /// Sample a synthetic corpus with entity constraints.
    Synth(SynthArgs),
    /// Finite-difference check of the training gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Copy, Clone, ValueEnum)]
enum Method {
    Gazetteer,
    Pmi,
    Synth,
}

#[derive(Copy, Clone, ValueEnum)]
enum Format {
    Tokens,
    Ptb,
}

#[derive(Args)]
struct CorpusArg {
    /// Corpus file: one sentence per line, tokens or bracketed trees.
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus format; detected from the first line when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    input: CorpusArg,
    #[arg(long, value_enum)]
    method: Method,
    /// Constraints TSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Phrase list, one phrase per line (gazetteer method).
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    /// TOML file with PMI settings (passes, delta, min_count).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    passes: Option<usize>,
    /// PMI merge threshold (default 1e-3 times the corpus token count).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    min_count: Option<f64>,
    /// Write the induced PMI phrases here.
    #[arg(long)]
    lexicon_out: Option<PathBuf>,
    /// Gold labels to turn into constraints (synth method).
    #[arg(long, value_delimiter = ',', default_value = "ENT")]
    labels: Vec<String>,
    /// Keep a seeded sample of this many constraints.
    #[arg(long)]
    restrict: Option<usize>,
    /// Drop constraints nested inside another constraint before sampling.
    #[arg(long)]
    forbid_nesting: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus.
    #[arg(long)]
    train: PathBuf,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Constraints for the training corpus (none: reconstruction only).
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Validation corpus with gold trees (default: the training corpus).
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    valid_constraints: Option<PathBuf>,
    /// Start from a trained model with a fresh optimizer.
    #[arg(long, conflicts_with = "resume")]
    init: Option<PathBuf>,
    /// Continue from a training-state checkpoint (e.g. last.ckpt).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory for best.ckpt, last.ckpt, metrics.log and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// TOML config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    variant: Option<PsSvmVariant>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    normalize_rescale: Option<bool>,
    #[arg(long)]
    ps_weight: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    val_sample: Option<usize>,
    #[arg(long)]
    punct: Option<PunctPolicy>,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: CorpusArg,
    /// Constraints to enforce with constrained decoding.
    #[arg(long, alias = "constrained")]
    constraints: Option<PathBuf>,
    /// Trade constraints against tree score with weight ε instead of
    /// satisfying as many as possible.
    #[arg(long, requires = "constraints")]
    epsilon: Option<f64>,
    /// Predictions file, one bracketed tree per line.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Gold corpus in bracketed form.
    #[arg(long)]
    gold: PathBuf,
    /// Predictions files to score (repeatable).
    #[arg(long = "pred", required_unless_present = "model")]
    preds: Vec<PathBuf>,
    /// Decode the gold sentences with this model instead of reading predictions.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Constraints of the gold sentences, for recall and buckets.
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[arg(long, default_value = "auto")]
    punct: PunctPolicy,
    /// Also report the right-branching binarized-gold upper bound.
    #[arg(long)]
    upper_bound: bool,
    /// Write the report as key=value lines.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Gold corpus in bracketed form.
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    constraints: PathBuf,
    /// Also report the constraint recall of this model's unconstrained parses.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Grammar file (`weight LHS -> symbols`); the built-in grammar otherwise.
    #[arg(long)]
    grammar: Option<PathBuf>,
    /// Entity phrases, one per line; the built-in list otherwise.
    #[arg(long)]
    entities: Option<PathBuf>,
    /// TOML config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_sentences: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    constraint_fraction: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Also write a train/test split holding out this many final sentences.
    #[arg(long)]
    heldout: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    len: usize,
    #[arg(long, default_value_t = 6)]
    vocab: usize,
    /// Variant to check; all four when omitted.
    #[arg(long)]
    variant: Option<PsSvmVariant>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0.5)]
    init_scale: f64,
}

/// Failure classes, mapped to exit codes 1 (usage), 2 (data) and 3 (numerical).
enum Failure {
    Usage(String),
    Data(Error),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) => Failure::Numeric(e.to_string()),
            other => Failure::Data(other),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(e) => write!(f, "{e}"),
            Failure::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("usage error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::ExtractConstraints(a) => extract(a),
        Command::Train(a) => run_train(a),
        Command::Parse(a) => parse(a),
        Command::Eval(a) => eval(a),
        Command::Stats(a) => stats(a),
        Command::Synth(a) => synth(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn read_corpus(path: &Path, format: Option<Format>) -> Outcome<Vec<Sentence>> {
    let format = match format {
        Some(Format::Tokens) => CorpusFormat::Tokens,
        Some(Format::Ptb) => CorpusFormat::PtbBrackets,
        None => detect_format(path)?,
    };
    Ok(load_corpus(path, format)?)
}

fn detect_format(path: &Path) -> Outcome<CorpusFormat> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    let first = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    Ok(if first.starts_with('(') {
        CorpusFormat::PtbBrackets
    } else {
        CorpusFormat::Tokens
    })
}

fn read_gold(path: &Path) -> Outcome<Vec<Sentence>> {
    Ok(load_corpus(path, CorpusFormat::PtbBrackets)?)
}

/// Loads and range-checks a constraints file against its sentences.
fn read_constraints(path: &Path, sentences: &[Sentence], source: ConstraintSource) -> Outcome<ConstraintSet> {
    let load = load_constraints(path, source)?;
    for (line, reason) in &load.rejected {
        log::warn!("{}:{line}: {reason}; constraint ignored", path.display());
    }
    let mut set = load.constraints;
    for msg in validate_constraints(&mut set, sentences) {
        log::warn!("{}: {msg}; constraint ignored", path.display());
    }
    Ok(set)
}

fn extract(a: ExtractArgs) -> Outcome {
    let sentences = read_corpus(&a.input.corpus, a.input.format)?;
    let mut m;
    let mut set = match a.method {
        Method::Gazetteer => {
            let path = a
                .gazetteer
                .as_ref()
                .ok_or_else(|| Failure::Usage("--method gazetteer needs --gazetteer".into()))?;
            let phrases = load_phrases(path)?;
            let index = GazetteerIndex::from_phrases(phrases.iter().map(|p| p.iter().map(|w| w.to_lowercase()).collect::<Vec<_>>()));
            m = Manifest::new("extract-constraints", hash_of(&json!({"method": "gazetteer"})), json!({"method": "gazetteer"}));
            m.inputs.push(("gazetteer", path.clone()));
            match_gazetteer(&sentences, &index)
        }
        Method::Pmi => {
            let mut cfg: PmiConfig = load_config(a.config.as_deref())?;
            if let Some(p) = a.passes {
                cfg.passes = p;
            }
            if a.delta.is_some() {
                cfg.delta = a.delta;
            }
            if let Some(c) = a.min_count {
                cfg.min_count = c;
            }
            if cfg.passes == 0 {
                return Err(Failure::Usage("--passes must be at least 1".into()));
            }
            let lexicon = induce_pmi_phrases(&sentences, &cfg);
            log::info!("induced {} phrases with delta {}", lexicon.len(), lexicon.delta);
            m = Manifest::new("extract-constraints", hash_of(&cfg), json!({"method": "pmi", "pmi": cfg}));
            if let Some(out) = &a.lexicon_out {
                let list: Vec<&Vec<String>> = lexicon.phrases.iter().collect();
                write_phrases(out, &list)?;
                m.outputs.push(out.clone());
            }
            match_pmi(&sentences, &lexicon)
        }
        Method::Synth => {
            let labels: BTreeSet<String> = a.labels.iter().cloned().collect();
            let cfg = json!({"method": "synth", "labels": labels});
            m = Manifest::new("extract-constraints", hash_of(&cfg), cfg);
            synth_constraints(&sentences, &labels)
        }
    };
    if let Some(k) = a.restrict {
        let r = restrict_constraints(&set, k, a.forbid_nesting, a.seed);
        if r.shortfall > 0 {
            log::warn!("{} constraints short of the requested {k}", r.shortfall);
        }
        set = r.constraints;
        m.config["restrict"] = json!({"count": k, "forbid_nesting": a.forbid_nesting, "seed": a.seed});
        m.config_hash = hash_of(&m.config);
    }
    write_constraints(&a.out, &set)?;
    m.inputs.push(("corpus", a.input.corpus.clone()));
    m.outputs.push(a.out.clone());
    m.write(&sidecar(&a.out))?;
    println!("constraints={} sentences_with_constraints={}", set.len(), set.sentence_ids().count());
    Ok(())
}

fn train_config(a: &TrainArgs) -> Outcome<TrainConfig> {
    let mut c: TrainConfig = load_config(a.config.as_deref())?;
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = a.$field.clone() { c.$field = v; })*
        };
    }
    set!(
        learning_rate, batch_size, max_epochs, max_len, dim, variant, margin, normalize_rescale, ps_weight, seed,
        eval_every, grad_clip, init_scale, vocab_size, min_count, punct
    );
    if a.patience.is_some() {
        c.patience = a.patience;
    }
    if a.val_sample.is_some() {
        c.val_sample = a.val_sample;
    }
    c.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(c)
}

fn run_train(a: TrainArgs) -> Outcome {
    let config = train_config(&a)?;
    let sentences = read_corpus(&a.train, a.format)?;
    let constraints = match &a.constraints {
        Some(p) => read_constraints(p, &sentences, ConstraintSource::GoldEntity)?,
        None => ConstraintSet::default(),
    };
    let (valid, valid_constraints) = match &a.valid {
        Some(p) => {
            let v = read_gold(p)?;
            let z = a
                .valid_constraints
                .as_ref()
                .map(|zp| read_constraints(zp, &v, ConstraintSource::GoldEntity))
                .transpose()?;
            (v, z)
        }
        None if sentences.iter().all(|s| s.gold_tree.is_some()) => (sentences.clone(), Some(constraints.clone())),
        None => {
            log::warn!("training corpus has no gold trees and no --valid was given; validation disabled");
            (Vec::new(), None)
        }
    };
    let (init, vocab) = if let Some(p) = &a.resume {
        let (state, vocab) = load_state(p, &config)?;
        (Init::Resume(Box::new(state)), vocab)
    } else if let Some(p) = &a.init {
        let model = load_model(p)?;
        (Init::Params(model.params), model.vocab)
    } else {
        (Init::Random, Vocab::build(&sentences, config.vocab_size, config.min_count))
    };
    let data = TrainData {
        train: &sentences,
        constraints: &constraints,
        valid: &valid,
        valid_constraints: valid_constraints.as_ref(),
    };
    let output = TrainOutput { dir: a.out.clone() };
    let outcome = train(&data, &vocab, &config, init, Some(&output))?;

    let mut m = Manifest::new("train", config.hash(), serde_json::to_value(&config).expect("config serializes"));
    m.vocab_hash = Some(vocab.hash());
    m.inputs.push(("train", a.train.clone()));
    for (k, p) in [
        ("constraints", &a.constraints),
        ("valid", &a.valid),
        ("valid_constraints", &a.valid_constraints),
        ("init", &a.init),
        ("resume", &a.resume),
    ] {
        if let Some(p) = p {
            m.inputs.push((k, p.clone()));
        }
    }
    m.outputs = vec![output.best(), output.last(), output.metrics()];
    m.write(&a.out.join("manifest.json"))?;
    print!("config_hash={}\nvocab_hash={}\n{}", config.hash(), vocab.hash(), summarize(&outcome));
    Ok(())
}

fn parse(a: ParseArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let sentences = read_corpus(&a.input.corpus, a.input.format)?;
    let constraints = a
        .constraints
        .as_ref()
        .map(|p| read_constraints(p, &sentences, ConstraintSource::GoldEntity))
        .transpose()?;
    let mode = a.epsilon.map_or(CckyMode::Lexicographic, CckyMode::Epsilon);
    let trees = predict(&model.params, &model.vocab, &sentences, constraints.as_ref(), mode)?;
    let tokens: Vec<Vec<String>> = sentences.iter().map(|s| s.tokens.clone()).collect();
    write_predictions(&a.out, &trees, &tokens)?;

    let mut m = Manifest::new(
        "parse",
        model.config_hash.clone(),
        json!({"constrained": constraints.is_some(), "epsilon": a.epsilon}),
    );
    m.vocab_hash = Some(model.vocab.hash());
    m.inputs.push(("model", a.model.clone()));
    m.inputs.push(("corpus", a.input.corpus.clone()));
    if let Some(p) = &a.constraints {
        m.inputs.push(("constraints", p.clone()));
    }
    m.outputs.push(a.out.clone());
    m.write(&sidecar(&a.out))?;
    println!("sentences={} config_hash={}", trees.len(), model.config_hash);
    Ok(())
}

/// Reads a predictions file back into binary trees aligned with `golds`.
fn read_predictions(path: &Path, golds: &[Sentence]) -> Outcome<Vec<BinaryTree>> {
    let parsed = load_corpus(path, CorpusFormat::PtbBrackets)?;
    if parsed.len() != golds.len() {
        return Err(Failure::Data(Error::Invalid(format!(
            "{} has {} trees but the gold corpus has {} sentences",
            path.display(),
            parsed.len(),
            golds.len()
        ))));
    }
    parsed
        .iter()
        .zip(golds)
        .map(|(p, g)| {
            if p.tokens != g.tokens {
                return Err(Failure::Data(Error::Invalid(format!(
                    "{}: sentence {} does not match the gold tokens",
                    path.display(),
                    g.id
                ))));
            }
            let spans: BTreeSet<Span> = p.gold_tree.as_ref().expect("bracketed").span_set();
            Ok(BinaryTree::from_spans(p.len(), &spans)?)
        })
        .collect()
}

fn eval(a: EvalArgs) -> Outcome {
    let golds = read_gold(&a.gold)?;
    let constraints = a
        .constraints
        .as_ref()
        .map(|p| read_constraints(p, &golds, ConstraintSource::GoldEntity))
        .transpose()?;

    // (label, trees, config hash, vocab hash)
    let mut systems: Vec<(String, Vec<BinaryTree>, Option<String>, Option<String>)> = Vec::new();
    if let Some(p) = &a.model {
        let model = load_model(p)?;
        let trees = predict(&model.params, &model.vocab, &golds, None, CckyMode::Lexicographic)?;
        systems.push((p.display().to_string(), trees, Some(model.config_hash.clone()), Some(model.vocab.hash())));
    }
    for p in &a.preds {
        let (config_hash, vocab_hash) = read_sidecar(p)?.unwrap_or((None, None));
        systems.push((p.display().to_string(), read_predictions(p, &golds)?, config_hash, vocab_hash));
    }
    let hashes: BTreeSet<&String> = systems.iter().filter_map(|s| s.3.as_ref()).collect();
    if hashes.len() > 1 {
        return Err(Failure::Data(Error::Incompatible(format!(
            "artifacts come from different vocabularies ({})",
            hashes.into_iter().cloned().collect::<Vec<_>>().join(", ")
        ))));
    }
    let upper_bound = if a.upper_bound {
        Some(binarized_upper_bound(&golds, Branching::Right, a.punct)?)
    } else {
        None
    };

    let mut kv = String::new();
    for (label, trees, config_hash, _) in &systems {
        let ids: Vec<usize> = golds.iter().map(|s| s.id).collect();
        let report = EvalReport {
            sentences: golds.len(),
            punct_policy: a.punct,
            config_hash: config_hash.clone(),
            f1: corpus_f1(trees, &golds, a.punct)?,
            constraint_recall: constraints.as_ref().and_then(|z| constraint_recall(trees, &ids, z)),
            constraints: constraints.as_ref().map_or(0, ConstraintSet::len),
            upper_bound,
            buckets: match &constraints {
                Some(z) => bucket_report(trees, &golds, z, a.punct)?,
                None => Vec::new(),
            },
        };
        if systems.len() > 1 {
            println!("== {label}");
            kv.push_str(&format!("system={label}\n"));
        }
        print!("{}", report.to_table());
        kv.push_str(&report.to_kv());
    }
    if let Some(out) = &a.out {
        std::fs::write(out, kv).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
        let cfg = json!({"punct": a.punct.to_string(), "upper_bound": a.upper_bound});
        let mut m = Manifest::new("eval", hash_of(&cfg), cfg);
        m.vocab_hash = systems.iter().find_map(|s| s.3.clone());
        m.inputs.push(("gold", a.gold.clone()));
        m.outputs.push(out.clone());
        m.write(&sidecar(out))?;
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Outcome {
    let golds = read_gold(&a.gold)?;
    let z = read_constraints(&a.constraints, &golds, ConstraintSource::GoldEntity)?;
    let s = constraint_stats(&z, &golds);
    print!("{}", s.to_table());
    let mut kv = s.to_kv();
    if let Some(p) = &a.model {
        let model = load_model(p)?;
        let trees = predict(&model.params, &model.vocab, &golds, None, CckyMode::Lexicographic)?;
        let ids: Vec<usize> = golds.iter().map(|s| s.id).collect();
        let r = constraint_recall(&trees, &ids, &z);
        let shown = r.map_or_else(|| "∅".to_owned(), |x| format!("{x:.1}"));
        println!("{:<24} {:>10}", "model recall (R %)", shown);
        kv.push_str(&format!("R={}\n", r.map_or_else(|| "none".to_owned(), |x| format!("{x:.6}"))));
    }
    if let Some(out) = &a.out {
        std::fs::write(out, kv).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    let mut cfg: SynthConfig = load_config(a.config.as_deref())?;
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = a.$field { cfg.$field = v; })*
        };
    }
    set!(n_sentences, seed, constraint_fraction, noise, max_depth, max_len);
    let grammar = match &a.grammar {
        Some(p) => Grammar::load(p)?,
        None => default_grammar(),
    };
    let entities = match &a.entities {
        Some(p) => load_phrases(p)?,
        None => default_entities(),
    };
    let corpus = generate(&grammar, &entities, &cfg)?;
    let dir = &a.out;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let write_text = |name: &str, text: String| -> Outcome<PathBuf> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
        Ok(p)
    };
    let mut outputs = vec![dir.join("corpus.ptb"), dir.join("tokens.txt"), dir.join("constraints.tsv")];
    write_gold(&outputs[0], &corpus.sentences)?;
    let tokens: Vec<Vec<String>> = corpus.sentences.iter().map(|s| s.tokens.clone()).collect();
    write_tokens(&outputs[1], &tokens)?;
    write_constraints(&outputs[2], &corpus.constraints)?;
    outputs.push(write_text("grammar.txt", grammar.to_text())?);
    outputs.push(dir.join("entities.txt"));
    write_phrases(&outputs[4], &entities)?;
    if let Some(h) = a.heldout {
        if h >= corpus.sentences.len() {
            return Err(Failure::Usage(format!("--heldout {h} leaves no training sentences")));
        }
        let ((tr, ztr), (te, zte)) = split_corpus(&corpus, corpus.sentences.len() - h);
        for (name, s, z) in [("train", &tr, &ztr), ("test", &te, &zte)] {
            let (ptb, tsv) = (dir.join(format!("{name}.ptb")), dir.join(format!("{name}.tsv")));
            write_gold(&ptb, s)?;
            write_constraints(&tsv, z)?;
            outputs.extend([ptb, tsv]);
        }
    }
    let mut m = Manifest::new("synth", hash_of(&cfg), serde_json::to_value(&cfg).expect("config serializes"));
    m.config["grammar_hash"] = json!(hash_of(&grammar.to_text()));
    m.config["heldout"] = json!(a.heldout);
    if let Some(p) = &a.grammar {
        m.inputs.push(("grammar", p.clone()));
    }
    if let Some(p) = &a.entities {
        m.inputs.push(("entities", p.clone()));
    }
    m.outputs = outputs;
    m.write(&dir.join("manifest.json"))?;
    println!(
        "sentences={} constraints={} resampled={} noisy={}",
        corpus.sentences.len(),
        corpus.constraints.len(),
        corpus.resampled,
        corpus.noisy
    );
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    if a.len < 3 || a.dim == 0 || a.vocab == 0 {
        return Err(Failure::Usage("gradcheck needs --len >= 3 and positive --dim and --vocab".into()));
    }
    let variants: Vec<PsSvmVariant> = match a.variant {
        Some(v) => vec![v],
        None => PsSvmVariant::ALL.to_vec(),
    };
    let params = ModelParams::init(a.vocab, a.dim, ParamInit { seed: a.seed, scale: a.init_scale });
    let tokens: Vec<usize> = (0..a.len).map(|i| (i * 7 + a.seed as usize) % a.vocab).collect();
    // One constraint the unconstrained parse misses, so the hinge is active.
    let tree = cky(&Chart::inside(&tokens, &params, usize::MAX)?);
    let absent = (2..a.len)
        .flat_map(|w| (0..=a.len - w).map(move |i| Span::new(i, i + w)))
        .find(|s| !tree.contains(*s))
        .expect("a binary tree cannot contain every span");
    let z: BTreeSet<Span> = [absent].into_iter().collect();
    println!("dim={} len={} constraint={absent} eps={} tol={}", a.dim, a.len, a.eps, a.tol);
    let mut failed = Vec::new();
    for variant in variants {
        let cfg = ObjectiveConfig {
            ps: PsSvmConfig {
                variant,
                ..PsSvmConfig::default()
            },
            ..ObjectiveConfig::default()
        };
        let loss = instance_loss(&tokens, &z, &params, &cfg)?;
        let mut scratch = params.clone();
        let mut error = None;
        let report = grad_check(
            |theta| {
                scratch.assign_flat(theta);
                let mut g = scratch.zeros_like();
                match instance_loss_and_grad(&tokens, &z, &scratch, &cfg, 1.0, &mut g) {
                    Ok(l) => (l.total, g.flatten()),
                    Err(e) => {
                        error.get_or_insert(e);
                        (f64::NAN, g.flatten())
                    }
                }
            },
            &params.flatten(),
            a.eps,
            a.tol,
        );
        if let Some(e) = error {
            return Err(e.into());
        }
        println!(
            "variant={variant} loss={:.6} checked={} max_rel_error={:.3e} max_abs_error={:.3e} passed={}",
            loss.total, report.checked, report.max_rel_error, report.max_abs_error, report.passed
        );
        if !report.passed {
            failed.push(variant.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}
