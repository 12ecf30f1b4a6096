//! Training objectives: word reconstruction from outside vectors and the
//! partially structured hinge loss over constraint-satisfying trees.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chart::{Chart, ChartGrad};
use crate::decode::{decode_with_bonus, tree_score, CckyMode};
use crate::diff::{softmax, ModelParams};
use crate::error::{Error, Result};
use crate::tree::{BinaryTree, Span};

/// Number of constraint spans present in `tree`.
pub fn satisfaction_count(tree: &BinaryTree, spans: &BTreeSet<Span>) -> usize {
    spans.iter().filter(|s| tree.contains(**s)).count()
}

/// Internal spans (width >= 2, root included) of `other` that also appear in `tree`.
pub fn shared_spans(tree: &BinaryTree, other: &BinaryTree) -> usize {
    other.nodes().filter(|(s, _)| tree.contains(*s)).count()
}

/// Rule set for picking the negative tree, positive tree and step scale.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PsSvmVariant {
    #[serde(rename = "ncbl")]
    Ncbl,
    #[serde(rename = "min_difference")]
    MinDifference,
    #[serde(rename = "rescale")]
    Rescale,
    #[serde(rename = "structured_ramp")]
    StructuredRamp,
}

impl PsSvmVariant {
    pub const ALL: [PsSvmVariant; 4] = [
        PsSvmVariant::Ncbl,
        PsSvmVariant::MinDifference,
        PsSvmVariant::Rescale,
        PsSvmVariant::StructuredRamp,
    ];

    /// Whether `y⁻` is chosen by loss-augmented inference.
    pub fn loss_augmented(self) -> bool {
        self == PsSvmVariant::StructuredRamp
    }
}

impl fmt::Display for PsSvmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PsSvmVariant::Ncbl => "ncbl",
            PsSvmVariant::MinDifference => "min_difference",
            PsSvmVariant::Rescale => "rescale",
            PsSvmVariant::StructuredRamp => "structured_ramp",
        })
    }
}

impl FromStr for PsSvmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ncbl" => Ok(PsSvmVariant::Ncbl),
            "min_difference" | "mindifference" | "min_diff" => Ok(PsSvmVariant::MinDifference),
            "rescale" => Ok(PsSvmVariant::Rescale),
            "structured_ramp" | "structuredramp" | "ramp" => Ok(PsSvmVariant::StructuredRamp),
            other => Err(Error::Invalid(format!("unknown PS-SVM variant `{other}`"))),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsSvmConfig {
    pub variant: PsSvmVariant,
    pub margin: f64,
    /// Divide the Rescale step scale by `n - 1`.
    pub normalize_rescale: bool,
}

impl Default for PsSvmConfig {
    fn default() -> Self {
        PsSvmConfig {
            variant: PsSvmVariant::Rescale,
            margin: 1.0,
            normalize_rescale: true,
        }
    }
}

/// Outcome of one hinge evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct PsSvmOutput {
    pub loss: f64,
    pub negative: BinaryTree,
    pub positive: BinaryTree,
    pub alpha: f64,
    pub negative_score: f64,
    pub positive_score: f64,
    /// `g(y⁻, z)` and `g(y⁺, z)`.
    pub negative_satisfied: usize,
    pub positive_satisfied: usize,
}

impl PsSvmOutput {
    /// The hinge is active, so the loss has a (possibly zero) gradient through S.
    pub fn violated(&self) -> bool {
        self.loss > 0.0
    }
}

/// Evaluates the hinge `α · max(0, margin + S(y⁻) − S(y⁺))`.
pub fn ps_svm_loss(chart: &Chart, constraints: &BTreeSet<Span>, config: &PsSvmConfig) -> Result<PsSvmOutput> {
    if config.margin <= 0.0 {
        return Err(Error::Invalid("margin must be positive".into()));
    }
    let n = chart.len();
    if let Some(bad) = constraints.iter().find(|s| s.end > n || s.start >= s.end) {
        return Err(Error::Invalid(format!("constraint {bad} outside sentence of length {n}")));
    }
    let in_z = |s: Span| i64::from(constraints.contains(&s));
    let lex = CckyMode::Lexicographic;

    let cky = decode_with_bonus(chart, |_| 0, lex);
    let negative = if config.variant.loss_augmented() {
        decode_with_bonus(chart, |s| -in_z(s), lex)
    } else {
        cky.clone()
    };
    let positive = match config.variant {
        PsSvmVariant::MinDifference => {
            let neg_spans = negative.tree.spans();
            decode_with_bonus(chart, |s| in_z(s) + i64::from(neg_spans.contains(&s)), lex)
        }
        _ => decode_with_bonus(chart, in_z, lex),
    };
    let (negative, positive) = (negative.tree, positive.tree);

    let alpha = match config.variant {
        PsSvmVariant::Rescale => {
            let shared = shared_spans(&positive, &negative) as f64;
            if config.normalize_rescale {
                if n > 1 {
                    shared / (n - 1) as f64
                } else {
                    1.0
                }
            } else {
                shared
            }
        }
        _ => 1.0,
    };
    let negative_score = tree_score(&negative, chart)?;
    let positive_score = tree_score(&positive, chart)?;
    let loss = alpha * (config.margin + negative_score - positive_score).max(0.0);
    Ok(PsSvmOutput {
        loss,
        negative_satisfied: satisfaction_count(&negative, constraints),
        positive_satisfied: satisfaction_count(&positive, constraints),
        negative,
        positive,
        alpha,
        negative_score,
        positive_score,
    })
}

/// Accumulates `scale · ∂J_PS` into `upstream` and `grads`. Tree choices and
/// α are constants; node coefficients of `y⁻` and `y⁺` are netted first so
/// identical trees contribute exactly nothing.
pub fn ps_svm_backward(
    chart: &Chart,
    params: &ModelParams,
    out: &PsSvmOutput,
    scale: f64,
    upstream: &mut ChartGrad,
    grads: &mut ModelParams,
) {
    if !out.violated() {
        return;
    }
    let c = scale * out.alpha;
    let mut coeffs: BTreeMap<(Span, usize), f64> = BTreeMap::new();
    for node in out.negative.nodes() {
        *coeffs.entry(node).or_default() += c;
    }
    for node in out.positive.nodes() {
        *coeffs.entry(node).or_default() -= c;
    }
    for ((span, k), coeff) in coeffs {
        if coeff != 0.0 {
            chart.local_score_backward(params, span, k, coeff, upstream, grads);
        }
    }
}

/// `-(1/n) Σ_i log P(x_i | h_out(i, i+1))`; requires the outside pass.
pub fn reconstruction_loss(chart: &Chart, params: &ModelParams) -> Result<f64> {
    let mut total = 0.0;
    for (i, &t) in chart.tokens().iter().enumerate() {
        let logits = leaf_logits(chart, params, i)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total -= logits[t] - lse;
    }
    Ok(total / chart.len() as f64)
}

fn leaf_logits(chart: &Chart, params: &ModelParams, i: usize) -> Result<Vec<f64>> {
    if !chart.has_outside() {
        return Err(Error::Invalid("reconstruction needs the outside pass".into()));
    }
    let h = chart.h_out(Span::new(i, i + 1));
    Ok((0..params.vocab_size())
        .map(|v| params.projection.row(v).iter().zip(h).map(|(a, b)| a * b).sum())
        .collect())
}

/// Reconstruction loss with its gradient: `scale · ∂J_rec` goes into the
/// projection gradient and the outside-vector upstream buffer.
pub fn reconstruction_backward(
    chart: &Chart,
    params: &ModelParams,
    scale: f64,
    upstream: &mut ChartGrad,
    grads: &mut ModelParams,
) -> Result<f64> {
    let n = chart.len();
    let mut total = 0.0;
    for (i, &t) in chart.tokens().iter().enumerate() {
        let leaf = Span::new(i, i + 1);
        let logits = leaf_logits(chart, params, i)?;
        let probs = softmax(&logits);
        total -= probs[t].ln();
        let h = chart.h_out(leaf).to_vec();
        let dh = upstream.h_out_mut(leaf);
        for (v, &p) in probs.iter().enumerate() {
            let dlogit = scale * (p - if v == t { 1.0 } else { 0.0 }) / n as f64;
            if dlogit == 0.0 {
                continue;
            }
            let row = params.projection.row(v);
            for (d, x) in dh.iter_mut().zip(row) {
                *d += dlogit * x;
            }
            for (g, x) in grads.projection.row_mut(v).iter_mut().zip(&h) {
                *g += dlogit * x;
            }
        }
    }
    Ok(total / n as f64)
}

/// Full objective settings for one sentence.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub ps: PsSvmConfig,
    /// Weight of the hinge term.
    pub ps_weight: f64,
    pub max_len: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            ps: PsSvmConfig::default(),
            ps_weight: 1.0,
            max_len: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub ps: Option<PsSvmOutput>,
}

/// `J_rec + λ·J_PS`; sentences without constraints contribute `J_rec` only.
pub fn instance_loss(
    tokens: &[usize],
    constraints: &BTreeSet<Span>,
    params: &ModelParams,
    config: &ObjectiveConfig,
) -> Result<InstanceLoss> {
    let chart = Chart::encode(tokens, params, config.max_len)?;
    let reconstruction = reconstruction_loss(&chart, params)?;
    let ps = ps_term(&chart, constraints, config)?;
    let total = reconstruction + ps.as_ref().map_or(0.0, |p| config.ps_weight * p.loss);
    Ok(InstanceLoss {
        total,
        reconstruction,
        ps,
    })
}

fn ps_term(chart: &Chart, constraints: &BTreeSet<Span>, config: &ObjectiveConfig) -> Result<Option<PsSvmOutput>> {
    if constraints.is_empty() || config.ps_weight == 0.0 || chart.len() < 2 {
        return Ok(None);
    }
    ps_svm_loss(chart, constraints, &config.ps).map(Some)
}

/// Loss and full parameter gradient for one sentence, scaled by `scale`.
pub fn instance_loss_and_grad(
    tokens: &[usize],
    constraints: &BTreeSet<Span>,
    params: &ModelParams,
    config: &ObjectiveConfig,
    scale: f64,
    grads: &mut ModelParams,
) -> Result<InstanceLoss> {
    let chart = Chart::encode(tokens, params, config.max_len)?;
    let mut upstream = chart.zero_grad();
    let reconstruction = reconstruction_backward(&chart, params, scale, &mut upstream, grads)?;
    let ps = ps_term(&chart, constraints, config)?;
    if let Some(out) = &ps {
        ps_svm_backward(&chart, params, out, scale * config.ps_weight, &mut upstream, grads);
    }
    chart.backward(params, upstream, grads);
    let total = reconstruction + ps.as_ref().map_or(0.0, |p| config.ps_weight * p.loss);
    if !total.is_finite() {
        return Err(Error::NonFinite("instance loss".into()));
    }
    Ok(InstanceLoss {
        total,
        reconstruction,
        ps,
    })
}

/// Gradient of the hinge term alone.
pub fn ps_svm_grad(
    tokens: &[usize],
    constraints: &BTreeSet<Span>,
    params: &ModelParams,
    config: &ObjectiveConfig,
) -> Result<(Option<PsSvmOutput>, ModelParams)> {
    let chart = Chart::encode(tokens, params, config.max_len)?;
    let mut grads = params.zeros_like();
    let mut upstream = chart.zero_grad();
    let ps = ps_term(&chart, constraints, config)?;
    if let Some(out) = &ps {
        ps_svm_backward(&chart, params, out, config.ps_weight, &mut upstream, &mut grads);
    }
    chart.backward(params, upstream, &mut grads);
    Ok((ps, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::ParamInit;

    fn spans(v: &[(usize, usize)]) -> BTreeSet<Span> {
        v.iter().map(|&(a, b)| Span::new(a, b)).collect()
    }

    #[test]
    fn satisfaction_examples() {
        let tree = BinaryTree::from_spans(4, &spans(&[(0, 4), (0, 2), (2, 4)])).unwrap();
        assert_eq!(satisfaction_count(&tree, &spans(&[(0, 2), (1, 3)])), 1);
        assert_eq!(satisfaction_count(&tree, &spans(&[(1, 3)])), 0);
        let z: BTreeSet<Span> = tree.spans().into_iter().filter(|s| !s.is_trivial(4)).collect();
        assert_eq!(satisfaction_count(&tree, &z), z.len());
    }

    #[test]
    fn uniform_prediction_costs_ln_vocab() {
        let mut p = ModelParams::init(2, 3, ParamInit::default());
        p.projection.fill(0.0);
        let chart = Chart::encode(&[0, 1, 1], &p, 40).unwrap();
        let loss = reconstruction_loss(&chart, &p).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_prediction_costs_nothing() {
        // Every outside vector is driven by the root vector; make the projection
        // pick the right word with a huge margin for a single-token sentence.
        let mut p = ModelParams::zeros(3, 2);
        p.root.data_mut().copy_from_slice(&[1.0, 0.0]);
        p.projection.row_mut(2).copy_from_slice(&[1e3, 0.0]);
        let chart = Chart::encode(&[2], &p, 40).unwrap();
        assert!(reconstruction_loss(&chart, &p).unwrap() < 1e-12);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in PsSvmVariant::ALL {
            assert_eq!(v.to_string().parse::<PsSvmVariant>().unwrap(), v);
        }
        assert!("hinge".parse::<PsSvmVariant>().is_err());
    }

    #[test]
    fn no_constraints_means_reconstruction_only() {
        let p = ModelParams::init(5, 4, ParamInit { seed: 3, scale: 0.5 });
        let cfg = ObjectiveConfig::default();
        let l = instance_loss(&[1, 2, 3, 4], &BTreeSet::new(), &p, &cfg).unwrap();
        let chart = Chart::encode(&[1, 2, 3, 4], &p, 40).unwrap();
        assert_eq!(l.total, reconstruction_loss(&chart, &p).unwrap());
        assert!(l.ps.is_none());

        let zero_weight = ObjectiveConfig {
            ps_weight: 0.0,
            ..cfg
        };
        let l = instance_loss(&[1, 2, 3, 4], &spans(&[(1, 3)]), &p, &zero_weight).unwrap();
        assert_eq!(l.total, l.reconstruction);
    }

    #[test]
    fn satisfied_constraints_give_margin_and_zero_gradient() {
        let p = ModelParams::init(6, 4, ParamInit { seed: 8, scale: 0.5 });
        let tokens = [1, 2, 3, 4, 5];
        let chart = Chart::encode(&tokens, &p, 40).unwrap();
        let best = crate::decode::cky(&chart);
        let z: BTreeSet<Span> = best.spans().into_iter().filter(|s| !s.is_trivial(5)).collect();
        for variant in [PsSvmVariant::Ncbl, PsSvmVariant::MinDifference, PsSvmVariant::Rescale] {
            let cfg = ObjectiveConfig {
                ps: PsSvmConfig {
                    variant,
                    ..PsSvmConfig::default()
                },
                ..ObjectiveConfig::default()
            };
            let (out, g) = ps_svm_grad(&tokens, &z, &p, &cfg).unwrap();
            let out = out.unwrap();
            assert_eq!(out.positive, out.negative);
            assert_eq!(out.alpha, 1.0);
            assert_eq!(out.loss, 1.0);
            assert!(g.is_all_zero());
        }
    }

    #[test]
    fn rejects_out_of_range_constraints() {
        let p = ModelParams::init(6, 4, ParamInit::default());
        let chart = Chart::encode(&[1, 2, 3], &p, 40).unwrap();
        assert!(ps_svm_loss(&chart, &spans(&[(1, 5)]), &PsSvmConfig::default()).is_err());
    }
}
