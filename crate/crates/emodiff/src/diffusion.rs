//! Model-agnostic diffusion arithmetic.
//!
//! Noise schedules, forward noising, deterministic DDIM stepping and its
//! exact inverse, one-step clean estimation, and the two guidance
//! combinators. Everything here is pure; models never appear.

use ndarray::{Array, Dimension};

use crate::error::{EmodiffError, Result};

/// Minimum cumulative alpha before clean estimation is refused.
pub const ALPHA_BAR_FLOOR: f32 = 1e-12;

/// Per-step noise variances plus their running products.
///
/// Timesteps are 1-based: `t` ranges over `1..=len()`, and `alpha_bar(0)`
/// is defined as 1 so that stepping to `t = 0` lands on clean data.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    betas: Vec<f32>,
    alphas: Vec<f32>,
    alpha_bars: Vec<f32>,
}

impl NoiseSchedule {
    /// Linear beta schedule, endpoints inclusive.
    pub fn linear(t: usize, beta_start: f32, beta_end: f32) -> Result<Self> {
        if t < 2 {
            return Err(EmodiffError::InvalidSchedule(format!(
                "need at least 2 steps, got {t}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(EmodiffError::InvalidSchedule(format!(
                "betas must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas = (0..t)
            .map(|i| {
                // f64 accumulation keeps the product identity tight.
                let frac = i as f64 / (t - 1) as f64;
                (beta_start as f64 + (beta_end as f64 - beta_start as f64) * frac) as f32
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Build from explicit betas; used by strided inference schedules.
    pub fn from_betas(betas: Vec<f32>) -> Result<Self> {
        if betas.is_empty() {
            return Err(EmodiffError::InvalidSchedule("empty beta list".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(EmodiffError::InvalidSchedule(format!(
                "beta {b} outside (0, 1)"
            )));
        }
        let alphas: Vec<f32> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0f64;
        for a in &alphas {
            acc *= *a as f64;
            alpha_bars.push(acc as f32);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta(&self, t: usize) -> f32 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f32 {
        self.alphas[t - 1]
    }

    /// Cumulative product of alphas up to `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f32 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Subsample into an `n_steps`-step inference schedule.
    ///
    /// Returns the reduced schedule together with the original (training)
    /// timestep each reduced step corresponds to, so a denoiser keeps
    /// seeing the timesteps it was trained on.
    pub fn strided(&self, n_steps: usize) -> Result<(NoiseSchedule, Vec<usize>)> {
        let t = self.len();
        if n_steps < 1 || n_steps > t {
            return Err(EmodiffError::InvalidSchedule(format!(
                "cannot stride {t} steps down to {n_steps}"
            )));
        }
        // Leading spacing: training timesteps stride, stride*2, ..., T.
        let stride = t / n_steps;
        let train_ts: Vec<usize> = (1..=n_steps).map(|i| i * stride).collect();
        let mut betas = Vec::with_capacity(n_steps);
        let mut prev_bar = 1.0f32;
        for &tt in &train_ts {
            let bar = self.alpha_bar(tt);
            betas.push(1.0 - bar / prev_bar);
            prev_bar = bar;
        }
        Ok((NoiseSchedule::from_betas(betas)?, train_ts))
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.len() {
            return Err(EmodiffError::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.len()
            )));
        }
        Ok(())
    }
}

fn check_same_shape<D: Dimension>(a: &Array<f32, D>, b: &Array<f32, D>) -> Result<()> {
    if a.raw_dim() != b.raw_dim() {
        return Err(EmodiffError::ShapeMismatch {
            expected: format!("{:?}", a.shape()),
            got: format!("{:?}", b.shape()),
        });
    }
    Ok(())
}

/// Noise `z0` to timestep `t`: `sqrt(ab)*z0 + sqrt(1-ab)*eps`.
///
/// Computed per element in f64 so the only f32 rounding is the final store;
/// `predict_clean` divides by `sqrt(alpha_bar)` (down to ~6e-3 at t = T), so
/// intermediate roundings here would be amplified past the 1e-5 inverse
/// tolerance.
pub fn forward_diffuse<D: Dimension>(
    z0: &Array<f32, D>,
    t: usize,
    eps: &Array<f32, D>,
    sched: &NoiseSchedule,
) -> Result<Array<f32, D>> {
    check_same_shape(z0, eps)?;
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t) as f64;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = z0.clone();
    out.zip_mut_with(eps, |o, &e| *o = ((*o as f64) * a + (e as f64) * b) as f32);
    Ok(out)
}

/// One-step clean estimate: algebraic inverse of [`forward_diffuse`].
pub fn predict_clean<D: Dimension>(
    z_t: &Array<f32, D>,
    eps_pred: &Array<f32, D>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Array<f32, D>> {
    check_same_shape(z_t, eps_pred)?;
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    if ab < ALPHA_BAR_FLOOR {
        return Err(EmodiffError::NumericDomain(format!(
            "alpha_bar({t}) = {ab} below floor"
        )));
    }
    let ab = ab as f64;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = z_t.clone();
    out.zip_mut_with(eps_pred, |o, &e| *o = (((*o as f64) - (e as f64) * b) / a) as f32);
    Ok(out)
}

/// Deterministic DDIM step from `t` to `t - 1`.
pub fn ddim_step<D: Dimension>(
    z_t: &Array<f32, D>,
    eps_pred: &Array<f32, D>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Array<f32, D>> {
    check_same_shape(z_t, eps_pred)?;
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    if ab < ALPHA_BAR_FLOOR {
        return Err(EmodiffError::NumericDomain(format!(
            "alpha_bar({t}) = {ab} below floor"
        )));
    }
    let ab = ab as f64;
    let ab_prev = sched.alpha_bar(t - 1) as f64;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (ap, bp) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let mut out = z_t.clone();
    out.zip_mut_with(eps_pred, |o, &e| {
        let z0 = ((*o as f64) - (e as f64) * b) / a;
        *o = (z0 * ap + (e as f64) * bp) as f32;
    });
    Ok(out)
}

/// Exact inverse of [`ddim_step`] under the same noise prediction:
/// maps `z_{t-1}` back to `z_t`.
pub fn ddim_invert_step<D: Dimension>(
    z_prev: &Array<f32, D>,
    eps_pred: &Array<f32, D>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Array<f32, D>> {
    check_same_shape(z_prev, eps_pred)?;
    sched.check_t(t)?;
    let ab_prev = sched.alpha_bar(t - 1);
    if ab_prev < ALPHA_BAR_FLOOR {
        return Err(EmodiffError::NumericDomain(format!(
            "alpha_bar({}) = {ab_prev} below floor",
            t - 1
        )));
    }
    let ab_prev = ab_prev as f64;
    let ab = sched.alpha_bar(t) as f64;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (ap, bp) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let mut out = z_prev.clone();
    out.zip_mut_with(eps_pred, |o, &e| {
        let z0 = ((*o as f64) - (e as f64) * bp) / ap;
        *o = (z0 * a + (e as f64) * b) as f32;
    });
    Ok(out)
}

/// Classifier-free guidance: `eps_cond + omega * (eps_cond - eps_uncond)`.
pub fn cfg_combine<D: Dimension>(
    eps_cond: &Array<f32, D>,
    eps_uncond: &Array<f32, D>,
    omega: f32,
) -> Result<Array<f32, D>> {
    check_same_shape(eps_cond, eps_uncond)?;
    Ok(eps_cond + &((eps_cond - eps_uncond) * omega))
}

/// Classifier guidance: `eps_pred + (omega + 1) * grad`, where `grad` is the
/// gradient of `log p(c | x_t)`. Used only by the classifier-guidance
/// baseline sampler.
pub fn cg_combine<D: Dimension>(
    eps_pred: &Array<f32, D>,
    classifier_grad: &Array<f32, D>,
    omega: f32,
) -> Result<Array<f32, D>> {
    check_same_shape(eps_pred, classifier_grad)?;
    Ok(eps_pred + &(classifier_grad * (omega + 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_schedule_small_case() {
        // T=2 with constant beta 0.5: product arithmetic by hand.
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha(1), 0.5);
        assert_eq!(s.alpha(2), 0.5);
        assert!((s.alpha_bar(1) - 0.5).abs() < 1e-7);
        assert!((s.alpha_bar(2) - 0.25).abs() < 1e-7);
    }

    #[test]
    fn default_schedule_monotone_and_product_identity() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let mut prod = 1.0f64;
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            prod *= s.alpha(t) as f64;
            let rel = ((s.alpha_bar(t) as f64 - prod) / prod).abs();
            assert!(rel < 1e-12 + 1e-6, "rel error {rel} at t={t}");
        }
    }

    #[test]
    fn schedule_rejects_bad_betas() {
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.5, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::linear(1, 0.1, 0.2).is_err());
    }

    #[test]
    fn forward_diffuse_scalar_example() {
        // alpha_bar = 0.64 at t=1 via beta = 0.36.
        let s = NoiseSchedule::from_betas(vec![0.36, 0.36]).unwrap();
        let z0 = arr1(&[1.0f32]);
        let eps = arr1(&[0.5f32]);
        let z1 = forward_diffuse(&z0, 1, &eps, &s).unwrap();
        assert!((z1[0] - 1.1).abs() < 1e-6);
        // Inverse of the same example.
        let back = predict_clean(&z1, &eps, 1, &s).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn forward_diffuse_shape_mismatch() {
        let s = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        let z0 = Array1::<f32>::zeros(4);
        let eps = Array1::<f32>::zeros(5);
        assert!(forward_diffuse(&z0, 1, &eps, &s).is_err());
    }

    #[test]
    fn ddim_step_at_t1_equals_clean_estimate() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.05).unwrap();
        let z = arr1(&[0.3f32, -0.7, 1.2]);
        let e = arr1(&[0.1f32, 0.4, -0.2]);
        let stepped = ddim_step(&z, &e, 1, &s).unwrap();
        let clean = predict_clean(&z, &e, 1, &s).unwrap();
        for (a, b) in stepped.iter().zip(clean.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn ddim_fixed_point_when_alpha_bar_equal() {
        // Two consecutive steps with (nearly) equal alpha_bar is impossible in a
        // valid schedule, but the fixed-point algebra holds in the limit: an
        // eps_pred consistent with z_t maps close to itself for tiny beta.
        let s = NoiseSchedule::from_betas(vec![1e-7, 1e-7]).unwrap();
        let z0 = arr1(&[0.8f32, -0.2]);
        let eps = arr1(&[0.3f32, 0.9]);
        let z2 = forward_diffuse(&z0, 2, &eps, &s).unwrap();
        let z1 = ddim_step(&z2, &eps, 2, &s).unwrap();
        for (a, b) in z1.iter().zip(z2.iter()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn exact_eps_rollout_recovers_clean_scalar() {
        // Brute-force rollout: with the true eps at every step, stepwise DDIM
        // from z_T reaches z0.
        let s = NoiseSchedule::linear(50, 1e-3, 0.05).unwrap();
        let z0 = arr1(&[0.6f32]);
        let eps = arr1(&[-0.4f32]);
        let mut z = forward_diffuse(&z0, 50, &eps, &s).unwrap();
        for t in (1..=50).rev() {
            // The consistent eps at each step is the same one used to noise.
            z = ddim_step(&z, &eps, t, &s).unwrap();
        }
        assert!((z[0] - z0[0]).abs() < 1e-4, "got {}", z[0]);
    }

    #[test]
    fn cfg_and_cg_scalar_examples() {
        let c = arr1(&[1.0f32]);
        let u = arr1(&[0.0f32]);
        assert!((cfg_combine(&c, &u, 7.5).unwrap()[0] - 8.5).abs() < 1e-6);
        assert!((cfg_combine(&c, &u, 0.0).unwrap()[0] - 1.0).abs() < 1e-6);
        assert!((cfg_combine(&c, &c, 123.0).unwrap()[0] - 1.0).abs() < 1e-6);

        let e = arr1(&[0.0f32]);
        let g = arr1(&[1.0f32]);
        assert!((cg_combine(&e, &g, 1.0).unwrap()[0] - 2.0).abs() < 1e-6);
        assert!((cg_combine(&e, &g, -1.0).unwrap()[0]).abs() < 1e-6);
        let z = arr1(&[0.0f32]);
        assert!((cg_combine(&c, &z, 3.0).unwrap()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn strided_schedule_tracks_training_alpha_bars() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let (inf, ts) = s.strided(50).unwrap();
        assert_eq!(inf.len(), 50);
        assert_eq!(ts.len(), 50);
        assert_eq!(*ts.last().unwrap(), 1000);
        for (i, &tt) in ts.iter().enumerate() {
            let rel =
                ((inf.alpha_bar(i + 1) - s.alpha_bar(tt)) / s.alpha_bar(tt)).abs();
            assert!(rel < 1e-4, "step {i} rel {rel}");
        }
    }

    fn rand_array(rng: &mut ChaCha8Rng, n: usize) -> Array1<f32> {
        Array1::from_iter((0..n).map(|_| rng.gen_range(-2.0f32..2.0)))
    }

    #[test]
    fn inverse_pairs_hold_on_random_cases() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let t = rng.gen_range(1..=1000);
            let z0 = rand_array(&mut rng, 16);
            let eps = rand_array(&mut rng, 16);
            let zt = forward_diffuse(&z0, t, &eps, &s).unwrap();
            let rec = predict_clean(&zt, &eps, t, &s).unwrap();
            for (a, b) in rec.iter().zip(z0.iter()) {
                assert!((a - b).abs() < 1e-5);
            }
            let zprev = ddim_step(&zt, &eps, t, &s).unwrap();
            let back = ddim_invert_step(&zprev, &eps, t, &s).unwrap();
            for (a, b) in back.iter().zip(zt.iter()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    proptest! {
        #[test]
        fn cfg_affine_in_omega(
            c in -5.0f32..5.0, u in -5.0f32..5.0,
            w1 in -3.0f32..3.0, w2 in -3.0f32..3.0,
        ) {
            let cv = arr1(&[c]);
            let uv = arr1(&[u]);
            let f = |w: f32| cfg_combine(&cv, &uv, w).unwrap()[0];
            // Midpoint of an affine map equals map of midpoint.
            let lhs = 0.5 * (f(w1) + f(w2));
            let rhs = f(0.5 * (w1 + w2));
            prop_assert!((lhs - rhs).abs() < 1e-4);
            prop_assert!((f(0.0) - c).abs() < 1e-6);
        }

        #[test]
        fn roundtrip_random(seed in 0u64..1000) {
            let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rng.gen_range(1..=100);
            let z = rand_array(&mut rng, 8);
            let e = rand_array(&mut rng, 8);
            let prev = ddim_step(&z, &e, t, &s).unwrap();
            let back = ddim_invert_step(&prev, &e, t, &s).unwrap();
            for (a, b) in back.iter().zip(z.iter()) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }
    }
}
