//! Minimal neural-network building blocks.
//!
//! Hand-rolled dense layers with explicit backward passes, a per-tensor Adam
//! optimizer, and the sinusoidal timestep features shared by the toy models.
//! Batches are row-major `Array2` (batch x features); a single sample is a
//! batch of one.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Dense layer `y = x W^T + b` with `w` shaped out x in.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

impl Linear {
    /// Kaiming-style init scaled by `gain` (0 gives a zero-initialized layer,
    /// used for conditioning injections so an untrained condition is inert).
    pub fn new(n_in: usize, n_out: usize, gain: f32, rng: &mut ChaCha8Rng) -> Self {
        let std = gain * (2.0 / n_in as f32).sqrt();
        let w = if std == 0.0 {
            Array2::zeros((n_out, n_in))
        } else {
            let dist = Normal::new(0.0f32, std).unwrap();
            Array2::from_shape_fn((n_out, n_in), |_| dist.sample(rng))
        };
        Self {
            w,
            b: Array1::zeros(n_out),
        }
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Gradients for `dy` at input `x`; returns (dw, db, dx).
    pub fn backward(
        &self,
        x: &Array2<f32>,
        dy: &Array2<f32>,
    ) -> (Array2<f32>, Array1<f32>, Array2<f32>) {
        let dw = dy.t().dot(x);
        let db = dy.sum_axis(Axis(0));
        let dx = dy.dot(&self.w);
        (dw, db, dx)
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

pub fn silu(x: &Array2<f32>) -> Array2<f32> {
    x.mapv(|v| v / (1.0 + (-v).exp()))
}

/// Derivative of silu evaluated at the pre-activation `x`.
pub fn silu_grad(x: &Array2<f32>) -> Array2<f32> {
    x.mapv(|v| {
        let s = 1.0 / (1.0 + (-v).exp());
        s * (1.0 + v * (1.0 - s))
    })
}

pub fn relu(x: &Array2<f32>) -> Array2<f32> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_grad(x: &Array2<f32>) -> Array2<f32> {
    x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Row-wise softmax, numerically stabilized.
pub fn softmax_rows(x: &Array2<f32>) -> Array2<f32> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Sinusoidal features of normalized timesteps, `dim` must be even.
pub fn timestep_features(ts: &[usize], t_max: usize, dim: usize) -> Array2<f32> {
    assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut out = Array2::zeros((ts.len(), dim));
    for (i, &t) in ts.iter().enumerate() {
        let pos = t as f32 / t_max as f32;
        for k in 0..half {
            let freq = 10_000f32.powf(-(k as f32) / half as f32);
            out[(i, 2 * k)] = (pos * freq * std::f32::consts::PI * 2.0).sin();
            out[(i, 2 * k + 1)] = (pos * freq * std::f32::consts::PI * 2.0).cos();
        }
    }
    out
}

/// Adam with per-tensor moment slots keyed by name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: usize,
    slots: HashMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            slots: HashMap::new(),
        }
    }
}

impl Adam {
    /// Advance the shared step counter; call once per optimizer step, before
    /// the per-tensor updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn update2(&mut self, key: &str, param: &mut Array2<f32>, grad: &Array2<f32>, lr: f32) {
        let n = param.len();
        let (m, v) = self
            .slots
            .entry(key.to_string())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        Self::apply(
            param.as_slice_mut().expect("contiguous"),
            grad.as_slice().expect("contiguous"),
            m,
            v,
            self.beta1,
            self.beta2,
            self.eps,
            self.step,
            lr,
        );
    }

    pub fn update1(&mut self, key: &str, param: &mut Array1<f32>, grad: &Array1<f32>, lr: f32) {
        let n = param.len();
        let (m, v) = self
            .slots
            .entry(key.to_string())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        Self::apply(
            param.as_slice_mut().expect("contiguous"),
            grad.as_slice().expect("contiguous"),
            m,
            v,
            self.beta1,
            self.beta2,
            self.eps,
            self.step,
            lr,
        );
    }

    pub fn update_linear(&mut self, key: &str, layer: &mut Linear, dw: &Array2<f32>, db: &Array1<f32>, lr: f32) {
        self.update2(&format!("{key}.w"), &mut layer.w, dw, lr);
        self.update1(&format!("{key}.b"), &mut layer.b, db, lr);
    }

    #[allow(clippy::too_many_arguments)]
    fn apply(
        param: &mut [f32],
        grad: &[f32],
        m: &mut [f32],
        v: &mut [f32],
        beta1: f32,
        beta2: f32,
        eps: f32,
        step: usize,
        lr: f32,
    ) {
        let bc1 = 1.0 - beta1.powi(step as i32);
        let bc2 = 1.0 - beta2.powi(step as i32);
        for i in 0..param.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            param[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// L2-normalize each row; rows with tiny norm are left unchanged.
pub fn normalize_rows(x: &Array2<f32>) -> Array2<f32> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 1e-12 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

/// Backward through row-wise L2 normalization: given y = x/|x| and dL/dy,
/// returns dL/dx = (dy - y (y . dy)) / |x|.
pub fn normalize_rows_backward(x: &Array2<f32>, dy: &Array2<f32>) -> Array2<f32> {
    let mut dx = Array2::zeros(x.raw_dim());
    for ((xrow, dyrow), mut dxrow) in x
        .rows()
        .into_iter()
        .zip(dy.rows())
        .zip(dx.rows_mut())
    {
        let norm = xrow.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
        let dot = xrow
            .iter()
            .zip(dyrow.iter())
            .map(|(a, b)| a * b)
            .sum::<f32>()
            / (norm * norm);
        Zip::from(&mut dxrow)
            .and(&xrow)
            .and(&dyrow)
            .for_each(|d, &xv, &dyv| *d = (dyv - xv * dot) / norm);
    }
    dx
}

pub fn he_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f32) -> Array2<f32> {
    let dist = Normal::new(0.0f32, std).unwrap();
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

pub fn standard_normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f32> {
    let dist = Normal::new(0.0f32, 1.0).unwrap();
    Array1::from_shape_fn(n, |_| dist.sample(rng))
}

/// Fisher-Yates shuffle driven by the run RNG.
pub fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn fd_check<F: Fn(&Array2<f32>) -> f32>(f: F, x: &Array2<f32>, analytic: &Array2<f32>) {
        let h = 1e-3;
        let mut x2 = x.clone();
        for idx in [(0usize, 0usize), (0, 1), (1, 2)] {
            let orig = x2[idx];
            x2[idx] = orig + h;
            let fp = f(&x2);
            x2[idx] = orig - h;
            let fm = f(&x2);
            x2[idx] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - analytic[idx]).abs() / analytic[idx].abs().max(1e-4);
            assert!(rel < 1e-2, "fd {fd} vs analytic {}", analytic[idx]);
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Linear::new(4, 3, 1.0, &mut rng);
        let x = he_normal(&mut rng, 2, 4, 1.0);
        // Scalar loss: sum of squared outputs.
        let y = layer.forward(&x);
        let dy = &y * 2.0;
        let (_, _, dx) = layer.backward(&x, &dy);
        fd_check(
            |xx| layer.forward(xx).mapv(|v| v * v).sum(),
            &x,
            &dx,
        );
    }

    #[test]
    fn silu_grad_matches_fd() {
        let x = Array2::from_shape_fn((2, 3), |(i, j)| 0.3 * i as f32 - 0.7 * j as f32 + 0.1);
        let g = silu_grad(&x);
        let h = 1e-3f32;
        for idx in [(0, 0), (1, 2)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (silu(&xp)[idx] - silu(&xm)[idx]) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-3);
        }
    }

    #[test]
    fn softmax_rows_simplex() {
        let x = Array2::from_shape_fn((3, 8), |(i, j)| (i * j) as f32 * 0.37 - 1.0);
        let p = softmax_rows(&x);
        for row in p.rows() {
            let sum: f32 = row.sum();
            assert!((sum - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn normalize_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = he_normal(&mut rng, 2, 5, 1.0);
        let target = he_normal(&mut rng, 2, 5, 1.0);
        // Loss: dot of normalized rows against a fixed target.
        let dy = target.clone();
        let dx = normalize_rows_backward(&x, &dy);
        let f = |xx: &Array2<f32>| (normalize_rows(xx) * &target).sum();
        fd_check(f, &x, &dx);
    }

    #[test]
    fn adam_reduces_quadratic() {
        let mut adam = Adam::default();
        let mut p = Array1::from_vec(vec![5.0f32, -3.0]);
        for _ in 0..500 {
            adam.begin_step();
            let g = p.clone() * 2.0;
            adam.update1("p", &mut p, &g, 0.05);
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2), "{p:?}");
    }

    #[test]
    fn timestep_features_shape_and_range() {
        let f = timestep_features(&[1, 500, 1000], 1000, 32);
        assert_eq!(f.shape(), &[3, 32]);
        assert!(f.iter().all(|v| v.abs() <= 1.0 + 1e-6));
        assert_ne!(f.row(0), f.row(1));
    }
}
