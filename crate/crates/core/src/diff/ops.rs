//! Forward ops and their reverse-mode gradients.
//!
//! Backward functions accumulate (`+=`) into the provided gradient buffers.

use super::ModelParams;
use crate::error::{Error, Result};

fn check_dims(params: &ModelParams, left: &[f64], right: &[f64]) -> Result<()> {
    let d = params.dim();
    for v in [left, right] {
        if v.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: v.len(),
            });
        }
    }
    Ok(())
}

/// `tanh(W [left; right] + b)`.
pub fn compose(params: &ModelParams, left: &[f64], right: &[f64]) -> Result<Vec<f64>> {
    check_dims(params, left, right)?;
    let mut out = vec![0.0; params.dim()];
    compose_into(params, left, right, &mut out);
    Ok(out)
}

pub fn compose_into(params: &ModelParams, left: &[f64], right: &[f64], out: &mut [f64]) {
    let d = out.len();
    let w = params.compose_w.data();
    let b = params.compose_b.data();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * 2 * d..(r + 1) * 2 * d];
        let (wl, wr) = row.split_at(d);
        let mut acc = b[r];
        for c in 0..d {
            acc += wl[c] * left[c] + wr[c] * right[c];
        }
        *o = acc.tanh();
    }
}

/// Given `out = compose(left, right)` and `dout`, accumulates parameter and
/// input gradients.
#[allow(clippy::too_many_arguments)]
pub fn compose_backward(
    params: &ModelParams,
    left: &[f64],
    right: &[f64],
    out: &[f64],
    dout: &[f64],
    grads: &mut ModelParams,
    dleft: &mut [f64],
    dright: &mut [f64],
) {
    let d = out.len();
    let w = params.compose_w.data();
    let gw = grads.compose_w.data_mut();
    for r in 0..d {
        let dz = dout[r] * (1.0 - out[r] * out[r]);
        if dz == 0.0 {
            continue;
        }
        let row = &w[r * 2 * d..(r + 1) * 2 * d];
        let grow = &mut gw[r * 2 * d..(r + 1) * 2 * d];
        for c in 0..d {
            grow[c] += dz * left[c];
            grow[d + c] += dz * right[c];
            dleft[c] += dz * row[c];
            dright[c] += dz * row[d + c];
        }
        grads.compose_b.data_mut()[r] += dz;
    }
}

/// Bilinear compatibility `leftᵀ S right`.
pub fn score(params: &ModelParams, left: &[f64], right: &[f64]) -> Result<f64> {
    check_dims(params, left, right)?;
    Ok(score_raw(params, left, right))
}

pub fn score_raw(params: &ModelParams, left: &[f64], right: &[f64]) -> f64 {
    let d = left.len();
    let s = params.score.data();
    let mut total = 0.0;
    for a in 0..d {
        let row = &s[a * d..(a + 1) * d];
        let mut acc = 0.0;
        for b in 0..d {
            acc += row[b] * right[b];
        }
        total += left[a] * acc;
    }
    total
}

pub fn score_backward(
    params: &ModelParams,
    left: &[f64],
    right: &[f64],
    dscore: f64,
    grads: &mut ModelParams,
    dleft: &mut [f64],
    dright: &mut [f64],
) {
    if dscore == 0.0 {
        return;
    }
    let d = left.len();
    let s = params.score.data();
    let gs = grads.score.data_mut();
    for a in 0..d {
        let row = &s[a * d..(a + 1) * d];
        let grow = &mut gs[a * d..(a + 1) * d];
        let la = dscore * left[a];
        let mut acc = 0.0;
        for b in 0..d {
            acc += row[b] * right[b];
            grow[b] += la * right[b];
            dright[b] += la * row[b];
        }
        dleft[a] += dscore * acc;
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (x - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x - lse).collect()
}

/// Gradient w.r.t. logits given softmax output `probs` and upstream `dprobs`.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(dprobs).map(|(p, g)| p * g).sum();
    probs.iter().zip(dprobs).map(|(p, g)| p * (g - dot)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{grad_check, ParamInit};

    #[test]
    fn compose_zero_weights() {
        let p = ModelParams::zeros(2, 3);
        assert_eq!(compose(&p, &[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), [0.0; 3]);
    }

    #[test]
    fn compose_hand_value() {
        let mut p = ModelParams::zeros(2, 1);
        p.compose_w.data_mut().copy_from_slice(&[1.0, 1.0]);
        let out = compose(&p, &[0.5], &[0.25]).unwrap();
        assert_eq!(out, [0.75f64.tanh()]);
    }

    #[test]
    fn dimension_mismatch() {
        let p = ModelParams::zeros(2, 3);
        assert!(matches!(compose(&p, &[1.0], &[1.0, 2.0, 3.0]), Err(Error::Dimension { .. })));
        assert!(score(&p, &[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn score_identity_and_zero() {
        let mut p = ModelParams::zeros(2, 3);
        let e1 = [1.0, 0.0, 0.0];
        assert_eq!(score(&p, &e1, &[0.3, -2.0, 5.0]).unwrap(), 0.0);
        p.score.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(score(&p, &e1, &e1).unwrap(), 1.0);
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]), [0.5, 0.5]);
        assert_eq!(softmax(&[1000.0, 1000.0]), [0.5, 0.5]);
        let p = softmax(&[1f64.ln(), 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let shifted = softmax(&[1f64.ln() + 40.0, 3f64.ln() + 40.0]);
        assert!((shifted[0] - p[0]).abs() < 1e-15);
        let lp = log_softmax(&[1f64.ln(), 3f64.ln()]);
        assert!((lp[1] - 0.75f64.ln()).abs() < 1e-15);
    }

    /// Packs `[params..., left, right]` into one vector for the checker.
    fn pack(p: &ModelParams, left: &[f64], right: &[f64]) -> Vec<f64> {
        let mut v = p.flatten();
        v.extend_from_slice(left);
        v.extend_from_slice(right);
        v
    }

    fn unpack(template: &ModelParams, theta: &[f64]) -> (ModelParams, Vec<f64>, Vec<f64>) {
        let d = template.dim();
        let n = template.num_values();
        let mut p = template.zeros_like();
        p.assign_flat(&theta[..n]);
        (p, theta[n..n + d].to_vec(), theta[n + d..].to_vec())
    }

    #[test]
    fn compose_gradients_match_finite_differences() {
        let d = 4;
        let template = ModelParams::init(2, d, ParamInit { seed: 11, scale: 0.5 });
        let left = [0.3, -0.2, 0.7, 0.1];
        let right = [-0.5, 0.4, 0.05, 0.9];
        let f = |theta: &[f64]| {
            let (p, l, r) = unpack(&template, theta);
            let out = compose(&p, &l, &r).unwrap();
            let mut g = p.zeros_like();
            let (mut dl, mut dr) = (vec![0.0; d], vec![0.0; d]);
            compose_backward(&p, &l, &r, &out, &vec![1.0; d], &mut g, &mut dl, &mut dr);
            let mut grad = g.flatten();
            grad.extend(dl);
            grad.extend(dr);
            (out.iter().sum(), grad)
        };
        let report = grad_check(f, &pack(&template, &left, &right), 1e-5, 1e-6);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn score_gradients_match_finite_differences() {
        let d = 4;
        let template = ModelParams::init(2, d, ParamInit { seed: 3, scale: 0.5 });
        let left = [0.3, -0.2, 0.7, 0.1];
        let right = [-0.5, 0.4, 0.05, 0.9];
        let f = |theta: &[f64]| {
            let (p, l, r) = unpack(&template, theta);
            let s = score_raw(&p, &l, &r);
            let mut g = p.zeros_like();
            let (mut dl, mut dr) = (vec![0.0; d], vec![0.0; d]);
            score_backward(&p, &l, &r, 1.0, &mut g, &mut dl, &mut dr);
            let mut grad = g.flatten();
            grad.extend(dl);
            grad.extend(dr);
            (s, grad)
        };
        let report = grad_check(f, &pack(&template, &left, &right), 1e-5, 1e-6);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let weights = [0.3, -1.2, 2.0, 0.5];
        let f = |x: &[f64]| {
            let p = softmax(x);
            let loss: f64 = p.iter().zip(&weights).map(|(a, b)| a * b).sum();
            (loss, softmax_backward(&p, &weights))
        };
        let report = grad_check(f, &[0.1, 0.5, -0.3, 1.1], 1e-5, 1e-6);
        assert!(report.passed, "{report:?}");
    }
}
