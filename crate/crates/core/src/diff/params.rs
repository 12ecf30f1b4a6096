use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ParamInit {
    pub seed: u64,
    /// Weights are drawn from `uniform(-scale, scale)`; biases start at zero.
    pub scale: f64,
}

impl Default for ParamInit {
    fn default() -> Self {
        ParamInit { seed: 0, scale: 0.1 }
    }
}

/// Every trainable tensor of the model. The same struct doubles as the
/// gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `[V, D]` leaf vectors.
    pub embedding: Tensor,
    /// `[D, 2D]` weights of `tanh(W [l; r] + b)`.
    pub compose_w: Tensor,
    /// `[D]`
    pub compose_b: Tensor,
    /// `[D, D]` bilinear split score `lᵀ S r`.
    pub score: Tensor,
    /// `[D]` outside vector of the root cell.
    pub root: Tensor,
    /// `[V, D]` reconstruction softmax weights.
    pub projection: Tensor,
}

pub const PARAM_NAMES: [&str; 6] = [
    "embedding",
    "compose_w",
    "compose_b",
    "score",
    "root",
    "projection",
];

impl ModelParams {
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        ModelParams {
            embedding: Tensor::zeros(&[vocab_size, dim]),
            compose_w: Tensor::zeros(&[dim, 2 * dim]),
            compose_b: Tensor::zeros(&[dim]),
            score: Tensor::zeros(&[dim, dim]),
            root: Tensor::zeros(&[dim]),
            projection: Tensor::zeros(&[vocab_size, dim]),
        }
    }

    pub fn init(vocab_size: usize, dim: usize, init: ParamInit) -> Self {
        let mut p = Self::zeros(vocab_size, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
        let dist = Uniform::new_inclusive(-init.scale, init.scale);
        for t in [
            &mut p.embedding,
            &mut p.compose_w,
            &mut p.score,
            &mut p.root,
            &mut p.projection,
        ] {
            t.data_mut().iter_mut().for_each(|x| *x = dist.sample(&mut rng));
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.vocab_size(), self.dim())
    }

    pub fn dim(&self) -> usize {
        self.compose_b.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.shape()[0]
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 6] {
        [
            (PARAM_NAMES[0], &self.embedding),
            (PARAM_NAMES[1], &self.compose_w),
            (PARAM_NAMES[2], &self.compose_b),
            (PARAM_NAMES[3], &self.score),
            (PARAM_NAMES[4], &self.root),
            (PARAM_NAMES[5], &self.projection),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.embedding,
            &mut self.compose_w,
            &mut self.compose_b,
            &mut self.score,
            &mut self.root,
            &mut self.projection,
        ]
    }

    /// Assembles parameters from named tensors, checking shapes.
    pub fn from_named(mut named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut take = |name: &str| -> Result<Tensor> {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Incompatible(format!("missing parameter `{name}`")))?;
            Ok(named.swap_remove(pos).1)
        };
        let p = ModelParams {
            embedding: take("embedding")?,
            compose_w: take("compose_w")?,
            compose_b: take("compose_b")?,
            score: take("score")?,
            root: take("root")?,
            projection: take("projection")?,
        };
        let expected = Self::zeros(p.vocab_size(), p.dim());
        for ((name, a), (_, b)) in p.named().iter().zip(expected.named().iter()) {
            if a.shape() != b.shape() {
                return Err(Error::Incompatible(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(p)
    }

    pub fn num_values(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for (_, t) in self.named() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_values());
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.named()) {
            a.add_assign(b.1);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn fill(&mut self, v: f64) {
        for t in self.tensors_mut() {
            t.fill(v);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.named().iter().map(|(_, t)| t.sum_squares()).sum::<f64>().sqrt()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.named() {
            t.check_finite(name)?;
        }
        Ok(())
    }

    pub fn is_all_zero(&self) -> bool {
        self.named().iter().all(|(_, t)| t.data().iter().all(|&x| x == 0.0))
    }
}
