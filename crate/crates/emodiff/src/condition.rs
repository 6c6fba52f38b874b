//! Prompt conditioning sequences and the learnable emotional tokens.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{EmodiffError, Result};
use crate::nn::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenOrigin {
    Prompt,
    Emotional,
}

/// A sequence of condition token vectors: prompt-derived tokens followed by
/// at most one contiguous emotional block (either a void placeholder or the
/// optimized tokens). The block is always appended at the end, so sequence
/// length is constant across the gate transition.
#[derive(Debug, Clone)]
pub struct ConditionEmbedding {
    tokens: Vec<Array1<f32>>,
    origins: Vec<TokenOrigin>,
    dim: usize,
}

impl ConditionEmbedding {
    pub fn from_prompt(tokens: Vec<Array1<f32>>, dim: usize) -> Result<Self> {
        for t in &tokens {
            if t.len() != dim {
                return Err(EmodiffError::ShapeMismatch {
                    expected: format!("token dim {dim}"),
                    got: format!("{}", t.len()),
                });
            }
        }
        let origins = vec![TokenOrigin::Prompt; tokens.len()];
        Ok(Self {
            tokens,
            origins,
            dim,
        })
    }

    /// The reserved null condition: pools to the zero vector regardless of
    /// prompt content.
    pub fn null(dim: usize) -> Self {
        Self {
            tokens: Vec::new(),
            origins: Vec::new(),
            dim,
        }
    }

    pub fn is_null(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Append a void placeholder block of `k` zero tokens.
    pub fn with_void_tail(&self, k: usize) -> Result<Self> {
        self.check_no_tail()?;
        let mut out = self.clone();
        for _ in 0..k {
            out.tokens.push(Array1::zeros(self.dim));
            out.origins.push(TokenOrigin::Emotional);
        }
        Ok(out)
    }

    /// Append the optimized emotional tokens.
    pub fn with_emotional_tail(&self, s: &EmotionalTokens) -> Result<Self> {
        self.check_no_tail()?;
        if s.dim() != self.dim {
            return Err(EmodiffError::ShapeMismatch {
                expected: format!("token dim {}", self.dim),
                got: format!("{}", s.dim()),
            });
        }
        let mut out = self.clone();
        for row in s.tokens().rows() {
            out.tokens.push(row.to_owned());
            out.origins.push(TokenOrigin::Emotional);
        }
        Ok(out)
    }

    fn check_no_tail(&self) -> Result<()> {
        if self.origins.contains(&TokenOrigin::Emotional) {
            return Err(EmodiffError::Contract(
                "condition already has an emotional block".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origins(&self) -> &[TokenOrigin] {
        &self.origins
    }

    pub fn tokens(&self) -> &[Array1<f32>] {
        &self.tokens
    }

    /// Mean-pooled condition vector; the null condition pools to zeros.
    pub fn pooled(&self) -> Array1<f32> {
        let mut out = Array1::<f32>::zeros(self.dim);
        if self.tokens.is_empty() {
            return out;
        }
        for t in &self.tokens {
            out += t;
        }
        out / self.tokens.len() as f32
    }

    /// Distribute a gradient on the pooled vector back to the emotional
    /// block: every token in the block receives `d_pooled / len`.
    pub fn emotional_grad_from_pooled(&self, d_pooled: &Array1<f32>) -> Array2<f32> {
        let k = self
            .origins
            .iter()
            .filter(|o| **o == TokenOrigin::Emotional)
            .count();
        let scale = 1.0 / self.tokens.len() as f32;
        let mut grads = Array2::<f32>::zeros((k, self.dim));
        for mut row in grads.rows_mut() {
            for (g, d) in row.iter_mut().zip(d_pooled.iter()) {
                *g = d * scale;
            }
        }
        grads
    }
}

/// Learnable emotional token block plus its Adam state.
#[derive(Debug, Clone)]
pub struct EmotionalTokens {
    s: Array2<f32>,
    adam: Adam,
}

impl EmotionalTokens {
    /// Zero-mean Gaussian init with the given standard deviation (matched to
    /// prompt-token statistics by the caller).
    pub fn init(k: usize, dim: usize, std: f32, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0f32, std.max(1e-6)).unwrap();
        let s = Array2::from_shape_fn((k, dim), |_| dist.sample(rng));
        Self {
            s,
            adam: Adam::default(),
        }
    }

    /// Wrap an explicit token block (fresh optimizer state); used by
    /// gradient checks and tooling that need exact control of the values.
    pub fn from_tokens(s: Array2<f32>) -> Self {
        Self {
            s,
            adam: Adam::default(),
        }
    }

    pub fn k(&self) -> usize {
        self.s.nrows()
    }

    pub fn dim(&self) -> usize {
        self.s.ncols()
    }

    pub fn tokens(&self) -> &Array2<f32> {
        &self.s
    }

    pub fn is_finite(&self) -> bool {
        self.s.iter().all(|v| v.is_finite())
    }

    /// One Adam step on the token block.
    pub fn apply_grad(&mut self, grad: &Array2<f32>, lr: f32) {
        self.adam.begin_step();
        self.adam.update2("s", &mut self.s, grad, lr);
    }

    pub fn iterations(&self) -> usize {
        self.adam.step_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn pooled_mean_and_null() {
        let a = Array1::from_vec(vec![1.0f32, 2.0]);
        let b = Array1::from_vec(vec![3.0f32, 4.0]);
        let c = ConditionEmbedding::from_prompt(vec![a, b], 2).unwrap();
        let p = c.pooled();
        assert_eq!(p, Array1::from_vec(vec![2.0, 3.0]));
        assert_eq!(
            ConditionEmbedding::null(2).pooled(),
            Array1::from_vec(vec![0.0, 0.0])
        );
    }

    #[test]
    fn void_tail_dilutes_mean() {
        let a = Array1::from_vec(vec![2.0f32, 4.0]);
        let c = ConditionEmbedding::from_prompt(vec![a], 2)
            .unwrap()
            .with_void_tail(1)
            .unwrap();
        assert_eq!(c.pooled(), Array1::from_vec(vec![1.0, 2.0]));
    }

    #[test]
    fn tail_can_only_be_appended_once() {
        let c = ConditionEmbedding::from_prompt(vec![Array1::zeros(2)], 2)
            .unwrap()
            .with_void_tail(2)
            .unwrap();
        assert!(c.with_void_tail(1).is_err());
    }

    #[test]
    fn emotional_grad_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = EmotionalTokens::init(2, 3, 0.5, &mut rng);
        let c = ConditionEmbedding::from_prompt(vec![Array1::zeros(3), Array1::zeros(3)], 3)
            .unwrap()
            .with_emotional_tail(&s)
            .unwrap();
        let d = Array1::from_vec(vec![4.0f32, 8.0, 12.0]);
        let g = c.emotional_grad_from_pooled(&d);
        assert_eq!(g.shape(), &[2, 3]);
        // 4 tokens total, so each emotional token sees d / 4.
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(1, 2)], 3.0);
    }

    #[test]
    fn adam_steps_tracked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = EmotionalTokens::init(1, 4, 0.1, &mut rng);
        let g = Array2::ones((1, 4));
        s.apply_grad(&g, 0.01);
        s.apply_grad(&g, 0.01);
        assert_eq!(s.iterations(), 2);
        assert!(s.is_finite());
    }
}
