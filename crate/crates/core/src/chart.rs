//! Inside-outside chart encoder.
//!
//! Every span `(i, j)` gets an inside vector and score built bottom-up from
//! all of its binary splits, and an outside vector and score built top-down
//! from all of its parent/sibling configurations. Both passes mix their
//! candidates with a softmax over candidate scores, so each cell is a convex
//! combination and the whole chart is differentiable.

use serde::Serialize;

use crate::diff::{compose_backward, compose_into, score_backward, score_raw, softmax_into, ModelParams};
use crate::error::{Error, Result};
use crate::tree::Span;

/// Operand of a cell candidate.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Slot {
    Inside(usize),
    Outside(usize),
}

/// Candidates mixed into one cell: for inside cells one per split point, for
/// outside cells one per parent.
#[derive(Clone, Debug, Default)]
struct Cell {
    operands: Vec<(Slot, Slot)>,
    /// Split point (inside) or the parent's far boundary (outside).
    keys: Vec<usize>,
    composed: Vec<f64>,
    local: Vec<f64>,
    raw: Vec<f64>,
    weight: Vec<f64>,
}

impl Cell {
    fn len(&self) -> usize {
        self.operands.len()
    }
}

/// Mixes candidates: `a = softmax(raw)`, `h = Σ a_k c_k`, `s = Σ a_k raw_k`.
pub fn mix_scores(raw: &[f64], composed: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let mut weights = vec![0.0; raw.len()];
    let mut h = vec![0.0; dim];
    let s = mix_into(raw, composed, &mut weights, &mut h);
    (weights, h, s)
}

fn mix_into(raw: &[f64], composed: &[f64], weights: &mut [f64], h: &mut [f64]) -> f64 {
    let dim = h.len();
    softmax_into(raw, weights);
    h.iter_mut().for_each(|x| *x = 0.0);
    let mut s = 0.0;
    for (k, &a) in weights.iter().enumerate() {
        let c = &composed[k * dim..(k + 1) * dim];
        for (hx, cx) in h.iter_mut().zip(c) {
            *hx += a * cx;
        }
        s += a * raw[k];
    }
    s
}

/// Per-sentence inside-outside chart.
#[derive(Clone, Debug)]
pub struct Chart {
    n: usize,
    dim: usize,
    tokens: Vec<usize>,
    h_in: Vec<f64>,
    s_in: Vec<f64>,
    inside: Vec<Cell>,
    h_out: Vec<f64>,
    s_out: Vec<f64>,
    outside: Vec<Cell>,
    has_outside: bool,
}

/// Upstream gradients with respect to chart quantities.
#[derive(Clone, Debug)]
pub struct ChartGrad {
    n: usize,
    dim: usize,
    pub(crate) h_in: Vec<f64>,
    pub(crate) s_in: Vec<f64>,
    pub(crate) h_out: Vec<f64>,
    pub(crate) s_out: Vec<f64>,
}

impl ChartGrad {
    fn idx(&self, span: Span) -> usize {
        span.start * (self.n + 1) + span.end
    }

    pub fn h_in_mut(&mut self, span: Span) -> &mut [f64] {
        let (i, d) = (self.idx(span), self.dim);
        &mut self.h_in[i * d..(i + 1) * d]
    }

    pub fn h_out_mut(&mut self, span: Span) -> &mut [f64] {
        let (i, d) = (self.idx(span), self.dim);
        &mut self.h_out[i * d..(i + 1) * d]
    }

    pub fn add_s_in(&mut self, span: Span, g: f64) {
        let i = self.idx(span);
        self.s_in[i] += g;
    }

    pub fn add_s_out(&mut self, span: Span, g: f64) {
        let i = self.idx(span);
        self.s_out[i] += g;
    }
}

impl Chart {
    fn idx(&self, span: Span) -> usize {
        span.start * (self.n + 1) + span.end
    }

    fn span_of(&self, idx: usize) -> Span {
        Span::new(idx / (self.n + 1), idx % (self.n + 1))
    }

    /// Runs the inside pass over vocabulary ids.
    pub fn inside(tokens: &[usize], params: &ModelParams, max_len: usize) -> Result<Chart> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::Invalid("empty sentence".into()));
        }
        if n > max_len {
            return Err(Error::TooLong { len: n, max: max_len });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= params.vocab_size()) {
            return Err(Error::Invalid(format!("token id {bad} outside vocabulary")));
        }
        let dim = params.dim();
        let cells = (n + 1) * (n + 1);
        let mut chart = Chart {
            n,
            dim,
            tokens: tokens.to_vec(),
            h_in: vec![0.0; cells * dim],
            s_in: vec![0.0; cells],
            inside: vec![Cell::default(); cells],
            h_out: Vec::new(),
            s_out: Vec::new(),
            outside: Vec::new(),
            has_outside: false,
        };
        for (i, &t) in tokens.iter().enumerate() {
            let at = chart.idx(Span::new(i, i + 1));
            chart.h_in[at * dim..(at + 1) * dim].copy_from_slice(params.embedding.row(t));
        }
        for width in 2..=n {
            for i in 0..=n - width {
                let span = Span::new(i, i + width);
                let at = chart.idx(span);
                let mut cell = Cell::default();
                for k in i + 1..i + width {
                    cell.operands.push((
                        Slot::Inside(chart.idx(Span::new(i, k))),
                        Slot::Inside(chart.idx(Span::new(k, span.end))),
                    ));
                    cell.keys.push(k);
                }
                chart.fill_cell(&mut cell, params);
                let s = mix_into(
                    &cell.raw,
                    &cell.composed,
                    &mut cell.weight,
                    &mut chart.h_in[at * dim..(at + 1) * dim],
                );
                chart.s_in[at] = s;
                chart.inside[at] = cell;
            }
        }
        chart.check_finite("inside pass")?;
        Ok(chart)
    }

    /// Runs the outside pass; the inside pass must already be complete.
    pub fn outside(&mut self, params: &ModelParams) -> Result<()> {
        let (n, dim) = (self.n, self.dim);
        let cells = (n + 1) * (n + 1);
        self.h_out = vec![0.0; cells * dim];
        self.s_out = vec![0.0; cells];
        self.outside = vec![Cell::default(); cells];
        let root = self.idx(Span::new(0, n));
        self.h_out[root * dim..(root + 1) * dim].copy_from_slice(params.root.data());
        for width in (1..n).rev() {
            for i in 0..=n - width {
                let span = Span::new(i, i + width);
                let at = self.idx(span);
                let mut cell = Cell::default();
                // Left child of parent (i, m); sibling (j, m) on the right.
                for m in span.end + 1..=n {
                    cell.operands.push((
                        Slot::Inside(self.idx(Span::new(span.end, m))),
                        Slot::Outside(self.idx(Span::new(i, m))),
                    ));
                    cell.keys.push(m);
                }
                // Right child of parent (m, j); sibling (m, i) on the left.
                for m in 0..i {
                    cell.operands.push((
                        Slot::Inside(self.idx(Span::new(m, i))),
                        Slot::Outside(self.idx(Span::new(m, span.end))),
                    ));
                    cell.keys.push(m);
                }
                self.fill_cell(&mut cell, params);
                let s = mix_into(
                    &cell.raw,
                    &cell.composed,
                    &mut cell.weight,
                    &mut self.h_out[at * dim..(at + 1) * dim],
                );
                self.s_out[at] = s;
                self.outside[at] = cell;
            }
        }
        self.has_outside = true;
        self.check_finite("outside pass")
    }

    /// Inside then outside.
    pub fn encode(tokens: &[usize], params: &ModelParams, max_len: usize) -> Result<Chart> {
        let mut chart = Chart::inside(tokens, params, max_len)?;
        chart.outside(params)?;
        Ok(chart)
    }

    fn slot_vec(&self, slot: Slot) -> &[f64] {
        let d = self.dim;
        match slot {
            Slot::Inside(i) => &self.h_in[i * d..(i + 1) * d],
            Slot::Outside(i) => &self.h_out[i * d..(i + 1) * d],
        }
    }

    fn slot_score(&self, slot: Slot) -> f64 {
        match slot {
            Slot::Inside(i) => self.s_in[i],
            Slot::Outside(i) => self.s_out[i],
        }
    }

    fn fill_cell(&self, cell: &mut Cell, params: &ModelParams) {
        let d = self.dim;
        let m = cell.len();
        cell.composed = vec![0.0; m * d];
        cell.local = vec![0.0; m];
        cell.raw = vec![0.0; m];
        cell.weight = vec![0.0; m];
        for (e, &(a, b)) in cell.operands.iter().enumerate() {
            let (va, vb) = (self.slot_vec(a), self.slot_vec(b));
            compose_into(params, va, vb, &mut cell.composed[e * d..(e + 1) * d]);
            cell.local[e] = score_raw(params, va, vb);
            cell.raw[e] = cell.local[e] + self.slot_score(a) + self.slot_score(b);
        }
    }

    fn check_finite(&self, what: &str) -> Result<()> {
        let ok = self.h_in.iter().chain(&self.s_in).chain(&self.h_out).chain(&self.s_out).all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite(what.into()))
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn has_outside(&self) -> bool {
        self.has_outside
    }

    pub fn h_in(&self, span: Span) -> &[f64] {
        self.slot_vec(Slot::Inside(self.idx(span)))
    }

    pub fn s_in(&self, span: Span) -> f64 {
        self.s_in[self.idx(span)]
    }

    pub fn h_out(&self, span: Span) -> &[f64] {
        self.slot_vec(Slot::Outside(self.idx(span)))
    }

    pub fn s_out(&self, span: Span) -> f64 {
        self.s_out[self.idx(span)]
    }

    /// Split weights `a(i,j,k)` for `k = i+1 .. j-1`.
    pub fn split_weights(&self, span: Span) -> &[f64] {
        &self.inside[self.idx(span)].weight
    }

    /// Raw split scores `s_in(i,j,k)` for `k = i+1 .. j-1`.
    pub fn split_scores(&self, span: Span) -> &[f64] {
        &self.inside[self.idx(span)].raw
    }

    /// Composed vectors `h_in(i,j,k)` laid out `k`-major.
    pub fn split_vectors(&self, span: Span) -> &[f64] {
        &self.inside[self.idx(span)].composed
    }

    /// Local compatibility `score(h_in(i,k), h_in(k,j))`.
    pub fn local_score(&self, span: Span, k: usize) -> f64 {
        self.inside[self.idx(span)].local[k - span.start - 1]
    }

    /// Outside mixing weights in candidate order: parents `(i, m)` for
    /// `m > j` ascending, then parents `(m, j)` for `m < i` ascending.
    pub fn outside_weights(&self, span: Span) -> &[f64] {
        &self.outside[self.idx(span)].weight
    }

    /// Parent spans of the outside candidates, same order as [`Self::outside_weights`].
    pub fn outside_parents(&self, span: Span) -> Vec<Span> {
        let cell = &self.outside[self.idx(span)];
        cell.operands
            .iter()
            .map(|&(_, parent)| match parent {
                Slot::Outside(p) | Slot::Inside(p) => self.span_of(p),
            })
            .collect()
    }

    pub fn num_cells(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    pub fn num_split_entries(&self) -> usize {
        self.inside.iter().map(Cell::len).sum()
    }

    pub fn zero_grad(&self) -> ChartGrad {
        let cells = (self.n + 1) * (self.n + 1);
        ChartGrad {
            n: self.n,
            dim: self.dim,
            h_in: vec![0.0; cells * self.dim],
            s_in: vec![0.0; cells],
            h_out: vec![0.0; cells * self.dim],
            s_out: vec![0.0; cells],
        }
    }

    /// Accumulates `coeff * ∂ local_score(span, k)` into the upstream buffers
    /// and the score parameters.
    pub fn local_score_backward(
        &self,
        params: &ModelParams,
        span: Span,
        k: usize,
        coeff: f64,
        upstream: &mut ChartGrad,
        grads: &mut ModelParams,
    ) {
        let d = self.dim;
        let (l, r) = (self.idx(Span::new(span.start, k)), self.idx(Span::new(k, span.end)));
        let mut dl = vec![0.0; d];
        let mut dr = vec![0.0; d];
        score_backward(
            params,
            self.slot_vec(Slot::Inside(l)),
            self.slot_vec(Slot::Inside(r)),
            coeff,
            grads,
            &mut dl,
            &mut dr,
        );
        add(&mut upstream.h_in[l * d..(l + 1) * d], &dl);
        add(&mut upstream.h_in[r * d..(r + 1) * d], &dr);
    }

    /// Back-propagates `upstream` through both passes into `grads`.
    /// Consumes the upstream buffers.
    pub fn backward(&self, params: &ModelParams, mut upstream: ChartGrad, grads: &mut ModelParams) {
        let (n, d) = (self.n, self.dim);
        if self.has_outside {
            for width in 1..n {
                for i in 0..=n - width {
                    let at = self.idx(Span::new(i, i + width));
                    self.cell_backward(&self.outside[at], at, Slot::Outside(at), params, &mut upstream, grads);
                }
            }
            let root = self.idx(Span::new(0, n));
            add(grads.root.data_mut(), &upstream.h_out[root * d..(root + 1) * d]);
        }
        for width in (2..=n).rev() {
            for i in 0..=n - width {
                let at = self.idx(Span::new(i, i + width));
                self.cell_backward(&self.inside[at], at, Slot::Inside(at), params, &mut upstream, grads);
            }
        }
        for (i, &t) in self.tokens.iter().enumerate() {
            let at = self.idx(Span::new(i, i + 1));
            add(grads.embedding.row_mut(t), &upstream.h_in[at * d..(at + 1) * d]);
        }
    }

    fn cell_backward(
        &self,
        cell: &Cell,
        at: usize,
        target: Slot,
        params: &ModelParams,
        up: &mut ChartGrad,
        grads: &mut ModelParams,
    ) {
        let d = self.dim;
        let (dh, ds) = match target {
            Slot::Inside(_) => (up.h_in[at * d..(at + 1) * d].to_vec(), up.s_in[at]),
            Slot::Outside(_) => (up.h_out[at * d..(at + 1) * d].to_vec(), up.s_out[at]),
        };
        if ds == 0.0 && dh.iter().all(|&x| x == 0.0) {
            return;
        }
        let m = cell.len();
        // d(loss)/d(weight_k), then through the softmax.
        let dweight: Vec<f64> = (0..m)
            .map(|e| {
                let c = &cell.composed[e * d..(e + 1) * d];
                dh.iter().zip(c).map(|(g, x)| g * x).sum::<f64>() + ds * cell.raw[e]
            })
            .collect();
        let mean: f64 = cell.weight.iter().zip(&dweight).map(|(a, g)| a * g).sum();
        let mut dcomposed = vec![0.0; d];
        let mut da = vec![0.0; d];
        let mut db = vec![0.0; d];
        for (e, &(a, b)) in cell.operands.iter().enumerate() {
            let w = cell.weight[e];
            let draw = ds * w + w * (dweight[e] - mean);
            for (dc, g) in dcomposed.iter_mut().zip(&dh) {
                *dc = w * g;
            }
            da.iter_mut().for_each(|x| *x = 0.0);
            db.iter_mut().for_each(|x| *x = 0.0);
            let (va, vb) = (self.slot_vec(a), self.slot_vec(b));
            compose_backward(
                params,
                va,
                vb,
                &cell.composed[e * d..(e + 1) * d],
                &dcomposed,
                grads,
                &mut da,
                &mut db,
            );
            score_backward(params, va, vb, draw, grads, &mut da, &mut db);
            for (slot, dv) in [(a, &da), (b, &db)] {
                match slot {
                    Slot::Inside(i) => {
                        add(&mut up.h_in[i * d..(i + 1) * d], dv);
                        up.s_in[i] += draw;
                    }
                    Slot::Outside(i) => {
                        add(&mut up.h_out[i * d..(i + 1) * d], dv);
                        up.s_out[i] += draw;
                    }
                }
            }
        }
    }

    /// Span-level view for inspection. Not a stable format.
    pub fn debug_dump(&self) -> ChartDump {
        let mut spans = Vec::new();
        for width in 1..=self.n {
            for i in 0..=self.n - width {
                let span = Span::new(i, i + width);
                let at = self.idx(span);
                spans.push(CellDump {
                    span,
                    s_in: self.s_in[at],
                    split_scores: self.inside[at].raw.clone(),
                    split_weights: self.inside[at].weight.clone(),
                    h_in: self.h_in(span).to_vec(),
                    s_out: self.has_outside.then(|| self.s_out[at]),
                    h_out: self.has_outside.then(|| self.h_out(span).to_vec()),
                });
            }
        }
        ChartDump {
            n: self.n,
            dim: self.dim,
            spans,
        }
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellDump {
    pub span: Span,
    pub s_in: f64,
    pub split_scores: Vec<f64>,
    pub split_weights: Vec<f64>,
    pub h_in: Vec<f64>,
    pub s_out: Option<f64>,
    pub h_out: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChartDump {
    pub n: usize,
    pub dim: usize,
    pub spans: Vec<CellDump>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{compose, ParamInit};

    fn params(seed: u64) -> ModelParams {
        ModelParams::init(6, 4, ParamInit { seed, scale: 0.5 })
    }

    #[test]
    fn two_tokens() {
        let p = params(1);
        let c = Chart::encode(&[1, 2], &p, 40).unwrap();
        let root = Span::new(0, 2);
        assert_eq!(c.split_weights(root), [1.0]);
        let expected = compose(&p, p.embedding.row(1), p.embedding.row(2)).unwrap();
        assert_eq!(c.h_in(root), expected.as_slice());
        // Single contribution for each leaf's outside vector.
        let out = compose(&p, c.h_in(Span::new(1, 2)), p.root.data()).unwrap();
        assert_eq!(c.h_out(Span::new(0, 1)), out.as_slice());
        assert_eq!(c.outside_weights(Span::new(0, 1)), [1.0]);
        assert_eq!(c.h_out(root), p.root.data());
        assert_eq!(c.s_out(root), 0.0);
    }

    #[test]
    fn zero_scores_split_evenly() {
        let mut p = params(2);
        p.score.fill(0.0);
        let c = Chart::inside(&[0, 1, 2], &p, 40).unwrap();
        assert_eq!(c.split_weights(Span::new(0, 3)), [0.5, 0.5]);
    }

    #[test]
    fn outside_parents_of_middle_leaf() {
        let c = Chart::encode(&[0, 1, 2], &params(3), 40).unwrap();
        let parents = c.outside_parents(Span::new(1, 2));
        assert_eq!(parents, [Span::new(1, 3), Span::new(0, 2)]);
        let total: f64 = c.outside_weights(Span::new(1, 2)).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refuses_long_sentences() {
        let err = Chart::inside(&[0; 5], &params(0), 4).unwrap_err();
        assert!(matches!(err, Error::TooLong { len: 5, max: 4 }));
        assert!(Chart::inside(&[], &params(0), 4).is_err());
    }

    #[test]
    fn cell_and_split_counts() {
        for n in 1..9usize {
            let c = Chart::inside(&vec![1; n], &params(4), 40).unwrap();
            assert_eq!(c.num_cells(), n * (n + 1) / 2);
            let expected: usize = (2..=n).map(|w| (n - w + 1) * (w - 1)).sum();
            assert_eq!(c.num_split_entries(), expected);
        }
    }

    #[test]
    fn single_token_outside_is_root() {
        let p = params(5);
        let c = Chart::encode(&[3], &p, 40).unwrap();
        assert_eq!(c.h_out(Span::new(0, 1)), p.root.data());
    }
}
