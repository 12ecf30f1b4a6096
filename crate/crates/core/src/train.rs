//! Training loop: length-bucketed batches, Adam, validation F1 with early
//! stopping, and checkpoints that allow a bit-identical resume.
//!
//! All randomness flows from `TrainConfig::seed`: parameter init, the
//! per-epoch shuffle (a ChaCha stream per epoch) and the validation sample.
//! Per-sentence gradients are computed in parallel but summed in batch order,
//! so results do not depend on the thread count.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::chart::Chart;
use crate::constraints::ConstraintSet;
use crate::corpus::Sentence;
use crate::decode::{ccky, cky, CckyMode};
use crate::diff::{Checkpoint, ModelParams, ParamInit, Tensor};
use crate::error::{Error, Result};
use crate::eval::{constraint_recall, corpus_f1, PunctPolicy};
use crate::objective::{instance_loss_and_grad, ObjectiveConfig, PsSvmConfig, PsSvmVariant};
use crate::tree::{BinaryTree, Span};
use crate::vocab::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Longer training sentences are skipped; evaluation keeps them.
    pub max_len: usize,
    pub dim: usize,
    pub variant: PsSvmVariant,
    pub margin: f64,
    pub normalize_rescale: bool,
    /// Weight of the hinge term; 0 trains on reconstruction only.
    pub ps_weight: f64,
    pub seed: u64,
    /// Validate every this many steps; 0 means once per epoch.
    pub eval_every: usize,
    /// Epochs without a new best validation F1 before stopping.
    pub patience: Option<usize>,
    pub grad_clip: f64,
    pub init_scale: f64,
    pub vocab_size: usize,
    pub min_count: usize,
    /// Validate on a seeded sample of this many sentences.
    pub val_sample: Option<usize>,
    pub punct: PunctPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-3,
            batch_size: 32,
            max_epochs: 40,
            max_len: 40,
            dim: 32,
            variant: PsSvmVariant::Rescale,
            margin: 1.0,
            normalize_rescale: true,
            ps_weight: 1.0,
            seed: 0,
            eval_every: 0,
            patience: None,
            grad_clip: 5.0,
            init_scale: 0.1,
            vocab_size: 10_000,
            min_count: 1,
            val_sample: None,
            punct: PunctPolicy::Auto,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("margin", self.margin),
            ("grad_clip", self.grad_clip),
            ("init_scale", self.init_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.ps_weight.is_finite() && self.ps_weight >= 0.0) {
            return Err(Error::Invalid(format!("ps_weight must be non-negative, got {}", self.ps_weight)));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_len", self.max_len),
            ("dim", self.dim),
            ("vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                return Err(Error::Invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            ps: PsSvmConfig {
                variant: self.variant,
                margin: self.margin,
                normalize_rescale: self.normalize_rescale,
            },
            ps_weight: self.ps_weight,
            max_len: self.max_len,
        }
    }

    /// Short hex digest of the serialized config.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        short_hash(text.as_bytes())
    }
}

pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Returns the index of the best score, preferring the earliest on ties.
pub fn early_stop_select(history: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in history.iter().enumerate() {
        if best.map_or(true, |b| v > history[b]) {
            best = Some(i);
        }
    }
    best
}

/// Adam with bias correction. A step with an all-zero gradient is skipped,
/// leaving parameters and moments untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(like: &ModelParams) -> Self {
        Adam {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        if grads.is_all_zero() {
            return;
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let moments = self.m.tensors_mut().into_iter().zip(self.v.tensors_mut());
        for ((p, (m, v)), (_, g)) in params.tensors_mut().into_iter().zip(moments).zip(grads.named()) {
            let (p, m, v, g) = (p.data_mut(), m.data_mut(), v.data_mut(), g.data());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` so that its global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Decodes every sentence: CKY, or CCKY where `constraints` has spans for it.
pub fn predict(
    params: &ModelParams,
    vocab: &Vocab,
    sentences: &[Sentence],
    constraints: Option<&ConstraintSet>,
    mode: CckyMode,
) -> Result<Vec<BinaryTree>> {
    sentences
        .par_iter()
        .map(|s| {
            let tokens = vocab.encode(&s.tokens);
            let chart = Chart::inside(&tokens, params, usize::MAX)?;
            let z = constraints.map(|c| c.for_sentence(s.id)).unwrap_or_default();
            Ok(if z.is_empty() { cky(&chart) } else { ccky(&chart, &z, mode) })
        })
        .collect()
}

/// One validation measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub epoch: usize,
    pub j_rec: f64,
    pub j_ps: f64,
    pub alpha: f64,
    /// Fraction of hinge terms whose positive and negative trees differ.
    pub differs: f64,
    pub val_f1: f64,
    pub constraint_recall: Option<f64>,
}

impl EvalRecord {
    pub fn to_line(&self) -> String {
        let recall = self.constraint_recall.map_or_else(|| "none".to_owned(), |r| r.to_string());
        format!(
            "event=eval step={} epoch={} J_rec={} J_PS={} alpha={} differs={} val_F1={} constraint_recall={}",
            self.step, self.epoch, self.j_rec, self.j_ps, self.alpha, self.differs, self.val_f1, recall
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Window {
    rec: f64,
    ps: f64,
    alpha: f64,
    differs: usize,
    hinge_terms: usize,
    sentences: usize,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub best_params: Option<ModelParams>,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub history: Vec<EvalRecord>,
    /// Mean training loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    window: Window,
}

impl TrainState {
    pub fn fresh(params: ModelParams) -> Self {
        TrainState {
            adam: Adam::new(&params),
            params,
            best_params: None,
            epoch: 0,
            step: 0,
            history: Vec::new(),
            epoch_losses: Vec::new(),
            window: Window::default(),
        }
    }

    pub fn best_index(&self) -> Option<usize> {
        early_stop_select(&self.history.iter().map(|r| r.val_f1).collect::<Vec<_>>())
    }
}

/// How to obtain the starting parameters.
#[derive(Clone, Debug)]
pub enum Init {
    Random,
    /// Start from trained parameters with a fresh optimizer.
    Params(ModelParams),
    /// Continue an interrupted run.
    Resume(Box<TrainState>),
}

pub struct TrainData<'a> {
    pub train: &'a [Sentence],
    pub constraints: &'a ConstraintSet,
    pub valid: &'a [Sentence],
    /// Constraints of the validation sentences, for recall reporting.
    pub valid_constraints: Option<&'a ConstraintSet>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Parameters of the best validation F1 (the final ones when no
    /// validation ran).
    pub best_params: ModelParams,
    pub best_index: Option<usize>,
    pub log: Vec<String>,
    pub stopped_early: bool,
    /// Training sentences skipped for exceeding `max_len`.
    pub excluded: usize,
}

/// Where checkpoints and the metrics log go.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn best(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }

    pub fn last(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.log")
    }
}

pub fn train(
    data: &TrainData<'_>,
    vocab: &Vocab,
    config: &TrainConfig,
    init: Init,
    output: Option<&TrainOutput>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let objective = config.objective();
    let resuming = matches!(init, Init::Resume(_));
    let mut state = match init {
        Init::Random => TrainState::fresh(ModelParams::init(
            vocab.len(),
            config.dim,
            ParamInit {
                seed: config.seed,
                scale: config.init_scale,
            },
        )),
        Init::Params(p) => TrainState::fresh(p),
        Init::Resume(s) => *s,
    };
    if state.params.vocab_size() != vocab.len() || state.params.dim() != config.dim {
        return Err(Error::Incompatible(format!(
            "parameters are {}x{}, config expects vocab {} and dim {}",
            state.params.vocab_size(),
            state.params.dim(),
            vocab.len(),
            config.dim
        )));
    }
    if let Some(out) = output {
        std::fs::create_dir_all(&out.dir).map_err(|e| Error::io(&out.dir, e))?;
        let log = out.metrics();
        if !resuming && log.exists() {
            std::fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
    }

    let mut excluded = 0;
    let mut examples: Vec<(Vec<usize>, BTreeSet<Span>)> = Vec::new();
    for s in data.train {
        if s.is_empty() || s.len() > config.max_len {
            excluded += 1;
            continue;
        }
        examples.push((vocab.encode(&s.tokens), data.constraints.for_sentence(s.id)));
    }
    if excluded > 0 {
        log::info!("skipping {excluded} training sentences longer than {}", config.max_len);
    }
    if examples.is_empty() {
        return Err(Error::Invalid("no training sentences within the length limit".into()));
    }
    let valid = validation_subset(data.valid, config);

    let mut log_lines = Vec::new();
    let mut stopped_early = false;
    let hash = config.hash();

    while state.epoch < config.max_epochs {
        if let Some(p) = config.patience {
            if let Some(best) = state.best_index() {
                if state.epoch - state.history[best].epoch >= p {
                    stopped_early = true;
                    break;
                }
            }
        }
        let epoch = state.epoch + 1;
        let batches = epoch_batches(&examples, config, epoch);
        let (mut epoch_loss, mut epoch_count) = (0.0, 0usize);
        for batch in batches {
            let scale = 1.0 / batch.len() as f64;
            let results: Vec<Result<_>> = batch
                .par_iter()
                .map(|&i| {
                    let (tokens, z) = &examples[i];
                    let mut g = state.params.zeros_like();
                    instance_loss_and_grad(tokens, z, &state.params, &objective, scale, &mut g).map(|l| (l, g))
                })
                .collect();
            let mut grads = state.params.zeros_like();
            for r in results {
                let (loss, g) = r.map_err(|e| divergence(e, state.step + 1))?;
                grads.add_assign(&g);
                epoch_loss += loss.total;
                epoch_count += 1;
                let w = &mut state.window;
                w.rec += loss.reconstruction;
                w.sentences += 1;
                if let Some(ps) = &loss.ps {
                    w.ps += ps.loss;
                    w.alpha += ps.alpha;
                    w.hinge_terms += 1;
                    w.differs += usize::from(ps.positive != ps.negative);
                }
            }
            grads.check_finite().map_err(|e| divergence(e, state.step + 1))?;
            clip_global_norm(&mut grads, config.grad_clip);
            state.adam.step(&mut state.params, &grads, config.learning_rate);
            state.params.check_finite().map_err(|e| divergence(e, state.step + 1))?;
            state.step += 1;
            if config.eval_every > 0 && state.step % config.eval_every as u64 == 0 {
                evaluate(&mut state, epoch, vocab, &valid, data, config, output, &hash, &mut log_lines)?;
            }
        }
        let mean = epoch_loss / epoch_count as f64;
        state.epoch = epoch;
        state.epoch_losses.push(mean);
        let line = format!("event=epoch epoch={epoch} step={} train_loss={mean}", state.step);
        log::info!("{line}");
        append_log(output, &line)?;
        log_lines.push(line);
        if config.eval_every == 0 {
            evaluate(&mut state, epoch, vocab, &valid, data, config, output, &hash, &mut log_lines)?;
        }
        if let Some(out) = output {
            save_state(&out.last(), &state, vocab, config)?;
        }
    }

    let best_index = state.best_index();
    let best_params = state.best_params.clone().unwrap_or_else(|| state.params.clone());
    if let (Some(out), None) = (output, best_index) {
        // Nothing was validated: the final parameters stand in for the best.
        save_model(&out.best(), &best_params, vocab, config, json!({"step": state.step, "config_hash": hash}))?;
    }
    Ok(TrainOutcome {
        state,
        best_params,
        best_index,
        log: log_lines,
        stopped_early,
        excluded,
    })
}

fn divergence(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step}; last good checkpoint kept")),
        other => other,
    }
}

fn validation_subset(valid: &[Sentence], config: &TrainConfig) -> Vec<Sentence> {
    match config.val_sample {
        Some(k) if k < valid.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(u64::MAX);
            let mut idx = rand::seq::index::sample(&mut rng, valid.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| valid[i].clone()).collect()
        }
        _ => valid.to_vec(),
    }
}

/// Shuffles, groups by length (stable, so equal lengths stay shuffled), cuts
/// into batches and shuffles the batch order.
fn epoch_batches(examples: &[(Vec<usize>, BTreeSet<Span>)], config: &TrainConfig, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| examples[i].0.len());
    let mut batches: Vec<Vec<usize>> = order.chunks(config.batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(&mut rng);
    batches
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    state: &mut TrainState,
    epoch: usize,
    vocab: &Vocab,
    valid: &[Sentence],
    data: &TrainData<'_>,
    config: &TrainConfig,
    output: Option<&TrainOutput>,
    hash: &str,
    log_lines: &mut Vec<String>,
) -> Result<()> {
    if valid.is_empty() {
        return Ok(());
    }
    let preds = predict(&state.params, vocab, valid, None, CckyMode::Lexicographic)?;
    let val_f1 = corpus_f1(&preds, valid, config.punct)?;
    let recall = data.valid_constraints.and_then(|c| {
        let ids: Vec<usize> = valid.iter().map(|s| s.id).collect();
        constraint_recall(&preds, &ids, c)
    });
    let w = std::mem::take(&mut state.window);
    let per = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
    let record = EvalRecord {
        step: state.step,
        epoch,
        j_rec: per(w.rec, w.sentences),
        j_ps: per(w.ps, w.sentences),
        alpha: per(w.alpha, w.hinge_terms),
        differs: per(w.differs as f64, w.hinge_terms),
        val_f1,
        constraint_recall: recall,
    };
    let improved = state.best_index().map_or(true, |b| val_f1 > state.history[b].val_f1);
    let line = record.to_line();
    log::info!("{line}");
    append_log(output, &line)?;
    log_lines.push(line);
    state.history.push(record);
    if improved {
        state.best_params = Some(state.params.clone());
        if let Some(out) = output {
            save_model(&out.best(), &state.params, vocab, config, json!({"step": state.step, "val_F1": val_f1, "config_hash": hash}))?;
        }
    }
    Ok(())
}

fn append_log(output: Option<&TrainOutput>, line: &str) -> Result<()> {
    let Some(out) = output else { return Ok(()) };
    let path = out.metrics();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
}

/// A trained model as stored on disk.
#[derive(Clone, Debug)]
pub struct ModelFile {
    pub params: ModelParams,
    pub vocab: Vocab,
    pub config: TrainConfig,
    pub config_hash: String,
    pub meta: serde_json::Value,
}

const MODEL_KIND: &str = "model";
const STATE_KIND: &str = "train_state";

fn header(kind: &str, vocab: &Vocab, config: &TrainConfig, extra: serde_json::Value) -> serde_json::Value {
    json!({
        "kind": kind,
        "config": config,
        "vocab_hash": vocab.hash(),
        "vocab": vocab.tokens(),
        "extra": extra,
    })
}

fn named(prefix: &str, p: &ModelParams) -> Vec<(String, Tensor)> {
    p.named().iter().map(|(n, t)| (format!("{prefix}{n}"), (*t).clone())).collect()
}

pub fn save_model(
    path: &Path,
    params: &ModelParams,
    vocab: &Vocab,
    config: &TrainConfig,
    extra: serde_json::Value,
) -> Result<()> {
    Checkpoint {
        config_hash: config.hash(),
        meta: header(MODEL_KIND, vocab, config, extra),
        tensors: named("", params),
    }
    .save(path)
}

fn parse_header(ckpt: &Checkpoint) -> Result<(Vocab, TrainConfig)> {
    let meta = &ckpt.meta;
    let tokens: Vec<String> = serde_json::from_value(meta["vocab"].clone())
        .map_err(|e| Error::Incompatible(format!("checkpoint vocab: {e}")))?;
    let config: TrainConfig = serde_json::from_value(meta["config"].clone())
        .map_err(|e| Error::Incompatible(format!("checkpoint config: {e}")))?;
    let vocab = Vocab::from_tokens(tokens.into_iter().skip(1));
    if meta["vocab_hash"].as_str() != Some(vocab.hash().as_str()) {
        return Err(Error::Incompatible("checkpoint vocab does not match its recorded hash".into()));
    }
    if config.hash() != ckpt.config_hash {
        return Err(Error::Incompatible("checkpoint config does not match its recorded hash".into()));
    }
    Ok((vocab, config))
}

fn take_prefixed(tensors: &[(String, Tensor)], prefix: &str) -> Vec<(String, Tensor)> {
    tensors
        .iter()
        .filter_map(|(n, t)| {
            let rest = n.strip_prefix(prefix)?;
            (!rest.contains('.')).then(|| (rest.to_owned(), t.clone()))
        })
        .collect()
}

/// Loads parameters from either a model file or a training-state file.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let ckpt = Checkpoint::load(path)?;
    let (vocab, config) = parse_header(&ckpt)?;
    let params = ModelParams::from_named(take_prefixed(&ckpt.tensors, ""))?;
    if params.vocab_size() != vocab.len() {
        return Err(Error::Incompatible(format!(
            "embedding has {} rows but the vocab has {} entries",
            params.vocab_size(),
            vocab.len()
        )));
    }
    Ok(ModelFile {
        params,
        vocab,
        config_hash: ckpt.config_hash.clone(),
        config,
        meta: ckpt.meta,
    })
}

pub fn save_state(path: &Path, state: &TrainState, vocab: &Vocab, config: &TrainConfig) -> Result<()> {
    let mut tensors = named("", &state.params);
    tensors.extend(named("adam_m.", &state.adam.m));
    tensors.extend(named("adam_v.", &state.adam.v));
    if let Some(best) = &state.best_params {
        tensors.extend(named("best.", best));
    }
    let extra = json!({
        "epoch": state.epoch,
        "step": state.step,
        "adam_t": state.adam.t,
        "history": state.history,
        "epoch_losses": state.epoch_losses,
        "window": state.window,
    });
    Checkpoint {
        config_hash: config.hash(),
        meta: header(STATE_KIND, vocab, config, extra),
        tensors,
    }
    .save(path)
}

/// Loads a training state; the stored config must hash to `config`'s hash.
pub fn load_state(path: impl AsRef<Path>, config: &TrainConfig) -> Result<(TrainState, Vocab)> {
    let ckpt = Checkpoint::load(path)?;
    let (vocab, stored) = parse_header(&ckpt)?;
    if ckpt.meta["kind"] != STATE_KIND {
        return Err(Error::Incompatible("not a training-state checkpoint".into()));
    }
    if stored.hash() != config.hash() {
        return Err(Error::Incompatible(format!(
            "checkpoint config hash {} differs from the current config hash {}",
            stored.hash(),
            config.hash()
        )));
    }
    let extra = &ckpt.meta["extra"];
    let params = ModelParams::from_named(take_prefixed(&ckpt.tensors, ""))?;
    let mut adam = Adam::new(&params);
    adam.m = ModelParams::from_named(take_prefixed(&ckpt.tensors, "adam_m."))?;
    adam.v = ModelParams::from_named(take_prefixed(&ckpt.tensors, "adam_v."))?;
    adam.t = meta_field(extra, "adam_t")?;
    let best = take_prefixed(&ckpt.tensors, "best.");
    let best_params = if best.is_empty() {
        None
    } else {
        Some(ModelParams::from_named(best)?)
    };
    let state = TrainState {
        params,
        best_params,
        adam,
        epoch: meta_field(extra, "epoch")?,
        step: meta_field(extra, "step")?,
        history: meta_field(extra, "history")?,
        epoch_losses: meta_field(extra, "epoch_losses")?,
        window: meta_field(extra, "window")?,
    };
    Ok((state, vocab))
}

fn meta_field<T: serde::de::DeserializeOwned>(extra: &serde_json::Value, name: &str) -> Result<T> {
    let v = extra
        .get(name)
        .ok_or_else(|| Error::Incompatible(format!("training state lacks `{name}`")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Incompatible(format!("training state `{name}`: {e}")))
}

/// Human-readable summary of a finished run.
pub fn summarize(outcome: &TrainOutcome) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "epochs={}", outcome.state.epoch);
    let _ = writeln!(out, "steps={}", outcome.state.step);
    let _ = writeln!(out, "excluded={}", outcome.excluded);
    let _ = writeln!(out, "stopped_early={}", outcome.stopped_early);
    if let Some(b) = outcome.best_index {
        let r = &outcome.state.history[b];
        let _ = writeln!(out, "best_step={}", r.step);
        let _ = writeln!(out, "best_val_F1={}", r.val_f1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{default_entities, default_grammar, generate, SynthConfig};

    #[test]
    fn early_stop_examples() {
        assert_eq!(early_stop_select(&[50.0, 60.0, 58.0]), Some(1));
        assert_eq!(early_stop_select(&[60.0, 60.0]), Some(0));
        assert_eq!(early_stop_select(&[1.0, 2.0, 3.0]), Some(2));
        assert_eq!(early_stop_select(&[]), None);
    }

    #[test]
    fn zero_gradient_step_is_a_no_op() {
        let mut p = ModelParams::init(5, 3, ParamInit::default());
        let before = p.clone();
        let mut adam = Adam::new(&p);
        let zero = p.zeros_like();
        adam.step(&mut p, &zero, 0.1);
        assert_eq!(p, before);
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ModelParams::zeros(2, 2);
        let mut g = p.zeros_like();
        g.root.data_mut()[0] = 3.0;
        g.root.data_mut()[1] = -0.5;
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &g, 0.01);
        // With bias correction the first update is lr * sign(g), up to eps.
        assert!((p.root.data()[0] + 0.01).abs() < 1e-9);
        assert!((p.root.data()[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = ModelParams::zeros(2, 2);
        g.root.data_mut()[0] = 30.0;
        g.root.data_mut()[1] = 40.0;
        assert_eq!(clip_global_norm(&mut g, 5.0), 50.0);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn batches_cover_every_example_once() {
        let ex: Vec<(Vec<usize>, BTreeSet<Span>)> = (0..37).map(|i| (vec![0; 1 + i % 5], BTreeSet::new())).collect();
        let cfg = TrainConfig {
            batch_size: 8,
            ..TrainConfig::default()
        };
        let b = epoch_batches(&ex, &cfg, 1);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        assert_eq!(b, epoch_batches(&ex, &cfg, 1));
        assert_ne!(b, epoch_batches(&ex, &cfg, 2));
    }

    fn tiny() -> (Vec<Sentence>, ConstraintSet, Vocab, TrainConfig) {
        let c = generate(
            &default_grammar(),
            &default_entities(),
            &SynthConfig {
                n_sentences: 40,
                max_len: 10,
                seed: 3,
                ..SynthConfig::default()
            },
        )
        .unwrap();
        let vocab = Vocab::build(&c.sentences, 1000, 1);
        let cfg = TrainConfig {
            dim: 6,
            batch_size: 8,
            max_epochs: 3,
            eval_every: 3,
            ..TrainConfig::default()
        };
        (c.sentences, c.constraints, vocab, cfg)
    }

    #[test]
    fn resume_is_bit_identical() {
        let (sents, z, vocab, cfg) = tiny();
        let data = TrainData {
            train: &sents[..30],
            constraints: &z,
            valid: &sents[30..],
            valid_constraints: Some(&z),
        };
        let full = train(&data, &vocab, &cfg, Init::Random, None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let out = TrainOutput {
            dir: dir.path().to_path_buf(),
        };
        let short = TrainConfig { max_epochs: 2, ..cfg.clone() };
        let first = train(&data, &vocab, &short, Init::Random, Some(&out)).unwrap();
        // The stored config differs only in max_epochs; resume under it, then extend.
        let (state, v2) = load_state(out.last(), &short).unwrap();
        assert_eq!(v2, vocab);
        assert_eq!(state, first.state);
        let rest = train(&data, &vocab, &cfg, Init::Resume(Box::new(state)), None).unwrap();
        assert_eq!(rest.state.params, full.state.params);
        assert_eq!(rest.state.history, full.state.history);
        let mut joined = first.log.clone();
        joined.extend(rest.log);
        assert_eq!(joined, full.log);
        assert!(load_state(out.last(), &cfg).is_err());
    }

    #[test]
    fn two_runs_are_identical() {
        let (sents, z, vocab, cfg) = tiny();
        let data = TrainData {
            train: &sents,
            constraints: &z,
            valid: &sents[..10],
            valid_constraints: None,
        };
        let a = train(&data, &vocab, &cfg, Init::Random, None).unwrap();
        let b = train(&data, &vocab, &cfg, Init::Random, None).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.best_params, b.best_params);
    }

    #[test]
    fn model_file_round_trip() {
        let (sents, _, vocab, cfg) = tiny();
        let p = ModelParams::init(vocab.len(), cfg.dim, ParamInit::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_model(&path, &p, &vocab, &cfg, json!({})).unwrap();
        let m = load_model(&path).unwrap();
        assert_eq!(m.params, p);
        assert_eq!(m.vocab, vocab);
        assert_eq!(m.config, cfg);
        let a = predict(&p, &vocab, &sents, None, CckyMode::Lexicographic).unwrap();
        let b = predict(&m.params, &m.vocab, &sents, None, CckyMode::Lexicographic).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn over_long_sentences_are_excluded() {
        let (sents, z, vocab, cfg) = tiny();
        let cfg = TrainConfig {
            max_len: 4,
            max_epochs: 1,
            ..cfg
        };
        let data = TrainData {
            train: &sents,
            constraints: &z,
            valid: &sents[..5],
            valid_constraints: None,
        };
        let out = train(&data, &vocab, &cfg, Init::Random, None).unwrap();
        assert_eq!(out.excluded, sents.iter().filter(|s| s.len() > 4).count());
    }
}
