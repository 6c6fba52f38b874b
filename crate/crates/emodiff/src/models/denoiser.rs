//! Conditional noise-prediction network.
//!
//! A small U-shaped dense network over the flattened 32x32x3 latent: two
//! encoder stages, a bottleneck, and a mirrored decoder stage with additive
//! skip connections. Timestep features and the pooled condition vector are
//! injected at every stage; condition injections are zero-initialized so an
//! untrained (or always-dropped) condition is exactly inert.
//!
//! The network itself regresses the clean latent; the noise prediction is
//! derived analytically as eps = (z_t - sqrt(alpha_bar) x0_hat) /
//! sqrt(1 - alpha_bar). White noise is full-rank and cannot pass through the
//! bottleneck, while clean glyphs live on a low-dimensional manifold, so
//! this parametrization is what makes the noise objective reachable; the
//! training loss and the external interface stay in noise space.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::condition::ConditionEmbedding;
use crate::diffusion::NoiseSchedule;
use crate::error::{EmodiffError, Result};
use crate::glyphs::{encode_image, Dataset, PromptTokens, Vocab, IMG_DIM};
use crate::models::checkpoint::{
    read_checkpoint, take_tensor, write_checkpoint, CheckpointMeta, ScheduleMeta, TensorEntry,
};
use crate::nn::{silu, silu_grad, standard_normal_vec, timestep_features, Adam, Linear};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub t_max: usize,
    pub beta_start: f32,
    pub beta_end: f32,
    pub hidden1: usize,
    pub hidden2: usize,
    pub token_dim: usize,
    pub temb_dim: usize,
    /// Size of the emotional block appended to every prompt.
    pub k_emotional: usize,
    pub vocab_size: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            t_max: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            hidden1: 256,
            hidden2: 128,
            token_dim: 32,
            temb_dim: 32,
            k_emotional: 4,
            vocab_size: Vocab::default().len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
    /// Prompt token embedding table, vocab x token_dim.
    pub embed: Array2<f32>,
    enc1: Linear,
    enc2: Linear,
    mid: Linear,
    dec1: Linear,
    out: Linear,
    // Timestep injections per stage.
    t1: Linear,
    t2: Linear,
    t3: Linear,
    t4: Linear,
    // Condition injections per stage (zero-initialized).
    c1: Linear,
    c2: Linear,
    c3: Linear,
    c4: Linear,
}

pub struct DenoiserCache {
    x: Array2<f32>,
    temb: Array2<f32>,
    cond: Array2<f32>,
    h1: Array2<f32>,
    e1: Array2<f32>,
    h2: Array2<f32>,
    e2: Array2<f32>,
    h3: Array2<f32>,
    m: Array2<f32>,
    h4: Array2<f32>,
    d1: Array2<f32>,
    /// Per-row sqrt(alpha_bar(t)).
    coef_a: Vec<f32>,
    /// Per-row 1 / sqrt(1 - alpha_bar(t)).
    coef_b: Vec<f32>,
}

#[derive(Default)]
pub struct DenoiserGrads {
    pub layers: Vec<(String, Array2<f32>, Array1<f32>)>,
    pub d_cond: Array2<f32>,
    pub d_x: Array2<f32>,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig, rng: &mut ChaCha8Rng) -> Self {
        let embed = crate::nn::he_normal(rng, cfg.vocab_size, cfg.token_dim, 0.5);
        let h1 = cfg.hidden1;
        let h2 = cfg.hidden2;
        Self {
            embed,
            enc1: Linear::new(IMG_DIM, h1, 1.0, rng),
            enc2: Linear::new(h1, h2, 1.0, rng),
            mid: Linear::new(h2, h2, 1.0, rng),
            dec1: Linear::new(h2, h1, 1.0, rng),
            out: Linear::new(h1, IMG_DIM, 0.5, rng),
            t1: Linear::new(cfg.temb_dim, h1, 1.0, rng),
            t2: Linear::new(cfg.temb_dim, h2, 1.0, rng),
            t3: Linear::new(cfg.temb_dim, h2, 1.0, rng),
            t4: Linear::new(cfg.temb_dim, h1, 1.0, rng),
            c1: Linear::new(cfg.token_dim, h1, 0.0, rng),
            c2: Linear::new(cfg.token_dim, h2, 0.0, rng),
            c3: Linear::new(cfg.token_dim, h2, 0.0, rng),
            c4: Linear::new(cfg.token_dim, h1, 0.0, rng),
            cfg,
        }
    }

    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule::linear(self.cfg.t_max, self.cfg.beta_start, self.cfg.beta_end)
            .expect("config schedule is valid")
    }

    pub fn n_params(&self) -> usize {
        self.embed.len()
            + [
                &self.enc1, &self.enc2, &self.mid, &self.dec1, &self.out, &self.t1, &self.t2,
                &self.t3, &self.t4, &self.c1, &self.c2, &self.c3, &self.c4,
            ]
            .iter()
            .map(|l| l.n_params())
            .sum::<usize>()
    }

    /// Look up prompt token vectors in the learned table.
    pub fn embed_prompt(&self, tokens: &PromptTokens) -> Result<ConditionEmbedding> {
        let mut vecs = Vec::with_capacity(tokens.len());
        for &id in &tokens.0 {
            if id as usize >= self.cfg.vocab_size {
                return Err(EmodiffError::InvalidArgument(format!(
                    "token id {id} outside vocab"
                )));
            }
            vecs.push(self.embed.row(id as usize).to_owned());
        }
        ConditionEmbedding::from_prompt(vecs, self.cfg.token_dim)
    }

    /// Empirical std of the embedding table; used to initialize emotional
    /// tokens with prompt-token statistics.
    pub fn prompt_token_std(&self) -> f32 {
        let n = self.embed.len() as f32;
        let mean = self.embed.sum() / n;
        (self.embed.mapv(|v| (v - mean) * (v - mean)).sum() / n).sqrt()
    }

    /// Batched forward; `ts` are training timesteps, `cond` is the pooled
    /// condition per row.
    pub fn forward(
        &self,
        x: &Array2<f32>,
        ts: &[usize],
        cond: &Array2<f32>,
    ) -> (Array2<f32>, DenoiserCache) {
        let temb = timestep_features(ts, self.cfg.t_max, self.cfg.temb_dim);
        let h1 = self.enc1.forward(x) + self.t1.forward(&temb) + self.c1.forward(cond);
        let e1 = silu(&h1);
        let h2 = self.enc2.forward(&e1) + self.t2.forward(&temb) + self.c2.forward(cond);
        let e2 = silu(&h2);
        let h3 = self.mid.forward(&e2) + self.t3.forward(&temb) + self.c3.forward(cond);
        let m = silu(&h3);
        let h4 = self.dec1.forward(&(&m + &e2)) + self.t4.forward(&temb) + self.c4.forward(cond);
        let d1 = silu(&h4);
        let x0_hat = self.out.forward(&(&d1 + &e1));

        // Noise-space output derived from the clean-latent regression.
        let sched = self.schedule();
        let coef_a: Vec<f32> = ts.iter().map(|&t| sched.alpha_bar(t).sqrt()).collect();
        let coef_b: Vec<f32> = ts
            .iter()
            .map(|&t| 1.0 / (1.0 - sched.alpha_bar(t)).max(1e-8).sqrt())
            .collect();
        let mut y = x0_hat;
        for (r, mut row) in y.rows_mut().into_iter().enumerate() {
            let (a, b) = (coef_a[r], coef_b[r]);
            row.zip_mut_with(&x.row(r), |v, &xr| *v = (xr - a * *v) * b);
        }
        (
            y,
            DenoiserCache {
                x: x.clone(),
                temb,
                cond: cond.clone(),
                h1,
                e1,
                h2,
                e2,
                h3,
                m,
                h4,
                d1,
                coef_a,
                coef_b,
            },
        )
    }

    /// Backward pass. With `with_params` set, layer gradients are collected
    /// for training; otherwise only the input/condition gradients needed by
    /// test-time token optimization are produced.
    pub fn backward(
        &self,
        cache: &DenoiserCache,
        dy: &Array2<f32>,
        with_params: bool,
    ) -> DenoiserGrads {
        let mut grads = DenoiserGrads::default();

        // Undo the noise-space parametrization: eps = (x - a x0) b, so the
        // network output gets -a*b times the incoming gradient and the input
        // picks up a direct +b term besides the path through the network.
        let mut dy_net = dy.clone();
        for (r, mut row) in dy_net.rows_mut().into_iter().enumerate() {
            let s = -cache.coef_a[r] * cache.coef_b[r];
            row.mapv_inplace(|v| v * s);
        }
        let dy = &dy_net;

        let out_in = &cache.d1 + &cache.e1;
        let (dw_out, db_out, d_out_in) = self.out.backward(&out_in, dy);
        let dd1 = &d_out_in;
        let mut de1 = d_out_in.clone();

        let dh4 = dd1 * &silu_grad(&cache.h4);
        let dec_in = &cache.m + &cache.e2;
        let (dw_dec1, db_dec1, d_dec_in) = self.dec1.backward(&dec_in, &dh4);
        let dm = &d_dec_in;
        let mut de2 = d_dec_in.clone();

        let dh3 = dm * &silu_grad(&cache.h3);
        let (dw_mid, db_mid, d_mid_in) = self.mid.backward(&cache.e2, &dh3);
        de2 += &d_mid_in;

        let dh2 = &de2 * &silu_grad(&cache.h2);
        let (dw_enc2, db_enc2, d_enc2_in) = self.enc2.backward(&cache.e1, &dh2);
        de1 += &d_enc2_in;

        let dh1 = &de1 * &silu_grad(&cache.h1);
        let (dw_enc1, db_enc1, mut dx) = self.enc1.backward(&cache.x, &dh1);
        // dy here is already the network-output gradient (scaled by -a*b);
        // dividing by that factor recovers the original noise-space gradient
        // for the direct +b input term: d_eps/d_x diagonal = b.
        for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
            let direct = -1.0 / cache.coef_a[r];
            row.zip_mut_with(&dy.row(r), |v, &g| *v += g * direct);
        }
        grads.d_x = dx;

        // Condition gradient via the four injection layers.
        let (cw1, cb1, dcond1) = self.c1.backward(&cache.cond, &dh1);
        let (cw2, cb2, dcond2) = self.c2.backward(&cache.cond, &dh2);
        let (cw3, cb3, dcond3) = self.c3.backward(&cache.cond, &dh3);
        let (cw4, cb4, dcond4) = self.c4.backward(&cache.cond, &dh4);
        grads.d_cond = dcond1 + dcond2 + dcond3 + dcond4;

        if with_params {
            let (tw1, tb1, _) = self.t1.backward(&cache.temb, &dh1);
            let (tw2, tb2, _) = self.t2.backward(&cache.temb, &dh2);
            let (tw3, tb3, _) = self.t3.backward(&cache.temb, &dh3);
            let (tw4, tb4, _) = self.t4.backward(&cache.temb, &dh4);
            grads.layers = vec![
                ("enc1".into(), dw_enc1, db_enc1),
                ("enc2".into(), dw_enc2, db_enc2),
                ("mid".into(), dw_mid, db_mid),
                ("dec1".into(), dw_dec1, db_dec1),
                ("out".into(), dw_out, db_out),
                ("t1".into(), tw1, tb1),
                ("t2".into(), tw2, tb2),
                ("t3".into(), tw3, tb3),
                ("t4".into(), tw4, tb4),
                ("c1".into(), cw1, cb1),
                ("c2".into(), cw2, cb2),
                ("c3".into(), cw3, cb3),
                ("c4".into(), cw4, cb4),
            ];
        }
        grads
    }

    fn layer_mut(&mut self, name: &str) -> &mut Linear {
        match name {
            "enc1" => &mut self.enc1,
            "enc2" => &mut self.enc2,
            "mid" => &mut self.mid,
            "dec1" => &mut self.dec1,
            "out" => &mut self.out,
            "t1" => &mut self.t1,
            "t2" => &mut self.t2,
            "t3" => &mut self.t3,
            "t4" => &mut self.t4,
            "c1" => &mut self.c1,
            "c2" => &mut self.c2,
            "c3" => &mut self.c3,
            "c4" => &mut self.c4,
            _ => unreachable!("unknown layer {name}"),
        }
    }

    fn layers(&self) -> Vec<(&'static str, &Linear)> {
        vec![
            ("enc1", &self.enc1),
            ("enc2", &self.enc2),
            ("mid", &self.mid),
            ("dec1", &self.dec1),
            ("out", &self.out),
            ("t1", &self.t1),
            ("t2", &self.t2),
            ("t3", &self.t3),
            ("t4", &self.t4),
            ("c1", &self.c1),
            ("c2", &self.c2),
            ("c3", &self.c3),
            ("c4", &self.c4),
        ]
    }

    pub fn save(&self, path: &Path, dataset_hash: &str, seed: u64) -> Result<()> {
        let meta = CheckpointMeta {
            arch_id: "denoiser".into(),
            dataset_hash: dataset_hash.into(),
            seed,
            schedule: ScheduleMeta {
                t_max: self.cfg.t_max,
                beta_start: self.cfg.beta_start,
                beta_end: self.cfg.beta_end,
            },
            config: serde_json::to_value(&self.cfg)?,
        };
        let mut tensors = vec![TensorEntry {
            name: "embed".into(),
            dims: vec![self.embed.nrows(), self.embed.ncols()],
            data: self.embed.iter().copied().collect(),
        }];
        for (name, layer) in self.layers() {
            tensors.push(TensorEntry {
                name: format!("{name}.w"),
                dims: vec![layer.w.nrows(), layer.w.ncols()],
                data: layer.w.iter().copied().collect(),
            });
            tensors.push(TensorEntry {
                name: format!("{name}.b"),
                dims: vec![layer.b.len()],
                data: layer.b.to_vec(),
            });
        }
        write_checkpoint(path, &meta, &tensors)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (meta, mut tensors) = read_checkpoint(path)?;
        if meta.arch_id != "denoiser" {
            return Err(EmodiffError::Checkpoint(format!(
                "expected denoiser checkpoint, got {}",
                meta.arch_id
            )));
        }
        let cfg: DenoiserConfig = serde_json::from_value(meta.config.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Denoiser::new(cfg.clone(), &mut rng);
        let embed = take_tensor(&mut tensors, "embed", &[cfg.vocab_size, cfg.token_dim])?;
        model.embed = Array2::from_shape_vec((cfg.vocab_size, cfg.token_dim), embed)
            .expect("dims checked");
        for name in [
            "enc1", "enc2", "mid", "dec1", "out", "t1", "t2", "t3", "t4", "c1", "c2", "c3", "c4",
        ] {
            let (rows, cols) = {
                let l = model.layer_mut(name);
                (l.w.nrows(), l.w.ncols())
            };
            let w = take_tensor(&mut tensors, &format!("{name}.w"), &[rows, cols])?;
            let b = take_tensor(&mut tensors, &format!("{name}.b"), &[rows])?;
            let l = model.layer_mut(name);
            l.w = Array2::from_shape_vec((rows, cols), w).expect("dims checked");
            l.b = Array1::from_vec(b);
        }
        Ok((model, meta))
    }
}

/// Single-sample noise prediction under a condition sequence.
pub fn predict_noise(
    model: &Denoiser,
    z_t: &Array1<f32>,
    t: usize,
    c: &ConditionEmbedding,
) -> Result<Array1<f32>> {
    if z_t.len() != IMG_DIM {
        return Err(EmodiffError::ShapeMismatch {
            expected: format!("{IMG_DIM}"),
            got: format!("{}", z_t.len()),
        });
    }
    if t < 1 || t > model.cfg.t_max {
        return Err(EmodiffError::InvalidArgument(format!(
            "timestep {t} outside schedule"
        )));
    }
    let x = z_t.view().insert_axis(Axis(0)).to_owned();
    let cond = c.pooled().insert_axis(Axis(0)).to_owned();
    let (y, _) = model.forward(&x, &[t], &cond);
    Ok(y.index_axis(Axis(0), 0).to_owned())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoiserTrainConfig {
    pub model: DenoiserConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Probability of replacing the condition with the null embedding.
    pub cond_dropout: f32,
    pub holdout_frac: f32,
    /// Held-out clean-latent reconstruction MSE the run must reach. The
    /// default of 0.20 was frozen from a reference run (2048 samples at
    /// rho = 0.8), which averaged ~0.12 over uniformly sampled timesteps
    /// (~0.03 at t <= 400 rising to ~0.39 at t = 1000).
    pub loss_ceiling: f32,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            model: DenoiserConfig::default(),
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            cond_dropout: 0.1,
            holdout_frac: 0.05,
            loss_ceiling: 0.20,
        }
    }
}

struct PreparedSet {
    latents: Array2<f32>,
    token_ids: Vec<Vec<u16>>,
}

fn prepare(samples: &[&crate::glyphs::Sample]) -> PreparedSet {
    let mut latents = Array2::zeros((samples.len(), IMG_DIM));
    let mut token_ids = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        latents.row_mut(i).assign(&encode_image(&s.image));
        token_ids.push(s.tokens.0.clone());
    }
    PreparedSet { latents, token_ids }
}

fn pooled_cond(model: &Denoiser, ids: &[u16]) -> Array1<f32> {
    // Prompt tokens plus the void emotional block: sum / (len + k).
    let mut v = Array1::<f32>::zeros(model.cfg.token_dim);
    for &id in ids {
        v += &model.embed.row(id as usize);
    }
    v / (ids.len() + model.cfg.k_emotional) as f32
}

fn eval_mse(model: &Denoiser, set: &PreparedSet, sched: &NoiseSchedule, seed: u64) -> f32 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = set.latents.nrows();
    let mut total = 0.0f64;
    let mut count = 0usize;
    let bs = 64usize;
    let mut start = 0;
    while start < n {
        let end = (start + bs).min(n);
        let b = end - start;
        let mut x = Array2::zeros((b, IMG_DIM));
        let mut ts = Vec::with_capacity(b);
        let mut cond = Array2::zeros((b, model.cfg.token_dim));
        for i in 0..b {
            let t = rng.gen_range(1..=sched.len());
            ts.push(t);
            let e = standard_normal_vec(&mut rng, IMG_DIM);
            let z0 = set.latents.row(start + i);
            let ab = sched.alpha_bar(t);
            for j in 0..IMG_DIM {
                x[(i, j)] = ab.sqrt() * z0[j] + (1.0 - ab).sqrt() * e[j];
            }
            cond.row_mut(i)
                .assign(&pooled_cond(model, &set.token_ids[start + i]));
        }
        let (y, _) = model.forward(&x, &ts, &cond);
        // Score in clean-latent space: under the x0-parametrization the
        // noise-space error is the x0 error divided by sqrt(1 - alpha_bar),
        // which diverges as t -> 1 even for a near-perfect model. Recover
        // x0_hat = (z_t - sqrt(1 - ab) * eps_hat) / sqrt(ab) and compare to z0.
        for i in 0..b {
            let ab = sched.alpha_bar(ts[i]);
            let a = ab.sqrt().max(1e-8);
            let s = (1.0 - ab).sqrt();
            let z0 = set.latents.row(start + i);
            for j in 0..IMG_DIM {
                let x0_hat = (x[(i, j)] - s * y[(i, j)]) / a;
                let d = (x0_hat - z0[j]) as f64;
                total += d * d;
            }
        }
        count += b * IMG_DIM;
        start = end;
    }
    (total / count as f64) as f32
}

/// Train a denoiser with condition dropout. Seed-deterministic in
/// single-threaded mode; fails distinctly when the held-out loss ceiling is
/// not met.
pub fn train_denoiser(
    dataset: &Dataset,
    cfg: &DenoiserTrainConfig,
    seed: u64,
) -> Result<Denoiser> {
    if dataset.samples.is_empty() {
        return Err(EmodiffError::InvalidArgument("empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Denoiser::new(cfg.model.clone(), &mut rng);
    let sched = model.schedule();
    let (train, hold) = dataset.split_holdout(cfg.holdout_frac);
    let train_set = prepare(&train);
    let hold_set = prepare(&hold);
    let n = train_set.latents.nrows();
    let mut adam = Adam::default();

    for _epoch in 0..cfg.epochs {
        let order = crate::nn::shuffled_indices(n, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut x = Array2::zeros((b, IMG_DIM));
            let mut eps = Array2::zeros((b, IMG_DIM));
            let mut ts = Vec::with_capacity(b);
            let mut cond = Array2::zeros((b, model.cfg.token_dim));
            let mut dropped = vec![false; b];
            for (i, &si) in chunk.iter().enumerate() {
                let t = rng.gen_range(1..=sched.len());
                ts.push(t);
                let e = standard_normal_vec(&mut rng, IMG_DIM);
                let z0 = train_set.latents.row(si);
                let ab = sched.alpha_bar(t);
                for j in 0..IMG_DIM {
                    x[(i, j)] = ab.sqrt() * z0[j] + (1.0 - ab).sqrt() * e[j];
                    eps[(i, j)] = e[j];
                }
                if rng.gen::<f32>() < cfg.cond_dropout {
                    dropped[i] = true; // null condition: pooled stays zero
                } else {
                    cond.row_mut(i)
                        .assign(&pooled_cond(&model, &train_set.token_ids[si]));
                }
            }
            let (y, cache) = model.forward(&x, &ts, &cond);
            let mut dy = (&y - &eps) * (2.0 / (b * IMG_DIM) as f32);
            // SNR-clamped weighting of the noise objective: at small t the
            // clean-latent parametrization amplifies the noise residual by
            // alpha_bar/(1-alpha_bar), so the raw gradient is dominated by a
            // few low-t rows. min(1, 1/SNR) keeps every timestep's gradient
            // bounded in clean space without touching the high-t behavior.
            for (i, mut row) in dy.rows_mut().into_iter().enumerate() {
                let ab = sched.alpha_bar(ts[i]);
                let w = ((1.0 - ab) / ab.max(1e-8)).min(1.0);
                row.mapv_inplace(|v| v * w);
            }
            let grads = model.backward(&cache, &dy, true);

            adam.begin_step();
            for (name, dw, db) in &grads.layers {
                let layer = model.layer_mut(name);
                adam.update2(&format!("{name}.w"), &mut layer.w, dw, cfg.lr);
                adam.update1(&format!("{name}.b"), &mut layer.b, db, cfg.lr);
            }
            // Embedding gradients: each prompt token row of a non-dropped
            // sample receives d_cond / (len + k).
            let mut dembed = Array2::<f32>::zeros(model.embed.raw_dim());
            for (i, &si) in chunk.iter().enumerate() {
                if dropped[i] {
                    continue;
                }
                let ids = &train_set.token_ids[si];
                let scale = 1.0 / (ids.len() + model.cfg.k_emotional) as f32;
                for &id in ids {
                    let mut row = dembed.row_mut(id as usize);
                    row += &(&grads.d_cond.row(i) * scale);
                }
            }
            adam.update2("embed", &mut model.embed, &dembed, cfg.lr);
        }
    }

    let holdout_mse = eval_mse(&model, &hold_set, &sched, seed.wrapping_add(1));
    if !holdout_mse.is_finite() {
        return Err(EmodiffError::NonFinite("held-out denoiser loss".into()));
    }
    if holdout_mse > cfg.loss_ceiling {
        return Err(EmodiffError::TrainingFailure(format!(
            "held-out clean-latent MSE {holdout_mse} above ceiling {}",
            cfg.loss_ceiling
        )));
    }
    Ok(model)
}

/// Held-out clean-latent reconstruction MSE of a trained denoiser (exposed
/// for calibration and reporting).
pub fn holdout_mse(model: &Denoiser, dataset: &Dataset, holdout_frac: f32, seed: u64) -> f32 {
    let (_, hold) = dataset.split_holdout(holdout_frac);
    let set = prepare(&hold);
    eval_mse(model, &set, &model.schedule(), seed.wrapping_add(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyphs::generate_dataset;

    fn tiny_model(seed: u64) -> Denoiser {
        let cfg = DenoiserConfig {
            hidden1: 32,
            hidden2: 16,
            ..DenoiserConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Denoiser::new(cfg, &mut rng)
    }

    #[test]
    fn output_shape_matches_input() {
        let model = tiny_model(0);
        let z = Array1::zeros(IMG_DIM);
        let vocab = Vocab::default();
        let toks = vocab.tokenize("a star on a dark background").unwrap();
        let c = model.embed_prompt(&toks).unwrap().with_void_tail(4).unwrap();
        let y = predict_noise(&model, &z, 500, &c).unwrap();
        assert_eq!(y.len(), IMG_DIM);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn null_condition_is_prompt_independent() {
        let model = tiny_model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = standard_normal_vec(&mut rng, IMG_DIM);
        let null = ConditionEmbedding::null(model.cfg.token_dim);
        let a = predict_noise(&model, &z, 10, &null).unwrap();
        let b = predict_noise(&model, &z, 10, &null).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn condition_grad_matches_finite_differences() {
        // Derivative of a scalar loss wrt the pooled condition vector.
        let model = tiny_model(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = crate::nn::he_normal(&mut rng, 1, IMG_DIM, 1.0);
        let mut cond = crate::nn::he_normal(&mut rng, 1, model.cfg.token_dim, 1.0);
        // Give the zero-initialized condition layers some weights so the
        // gradient is nontrivial.
        let mut model = model;
        model.c1 = Linear::new(model.cfg.token_dim, model.cfg.hidden1, 1.0, &mut rng);
        model.c3 = Linear::new(model.cfg.token_dim, model.cfg.hidden2, 1.0, &mut rng);
        let target = crate::nn::he_normal(&mut rng, 1, IMG_DIM, 1.0);
        // f64 accumulation: the centered difference would otherwise drown in
        // f32 rounding of a sum over 3072 coordinates.
        let loss = |m: &Denoiser, c: &Array2<f32>| {
            let (y, _) = m.forward(&x, &[700], c);
            y.iter()
                .zip(target.iter())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
        };
        let (y, cache) = model.forward(&x, &[700], &cond);
        let dy = (&y - &target) * 2.0;
        let grads = model.backward(&cache, &dy, false);
        let h = 1e-2f32;
        let mut checked = 0;
        for j in (0..model.cfg.token_dim).step_by(3) {
            let orig = cond[(0, j)];
            cond[(0, j)] = orig + h;
            let fp = loss(&model, &cond);
            cond[(0, j)] = orig - h;
            let fm = loss(&model, &cond);
            cond[(0, j)] = orig;
            let fd = ((fp - fm) / (2.0 * h as f64)) as f32;
            let an = grads.d_cond[(0, j)];
            let rel = (fd - an).abs() / an.abs().max(1e-3);
            assert!(rel < 2e-2, "coord {j}: fd {fd} vs analytic {an}");
            checked += 1;
        }
        assert!(checked > 5);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = generate_dataset(64, 0.8, 3).unwrap();
        let cfg = DenoiserTrainConfig {
            model: DenoiserConfig {
                hidden1: 32,
                hidden2: 16,
                ..DenoiserConfig::default()
            },
            epochs: 1,
            batch_size: 16,
            loss_ceiling: f32::MAX,
            ..DenoiserTrainConfig::default()
        };
        let a = train_denoiser(&data, &cfg, 11).unwrap();
        let b = train_denoiser(&data, &cfg, 11).unwrap();
        assert_eq!(a.embed, b.embed);
        assert_eq!(a.enc1.w, b.enc1.w);
        assert_eq!(a.out.b, b.out.b);
    }

    #[test]
    fn full_dropout_makes_condition_inert() {
        let data = generate_dataset(64, 0.8, 3).unwrap();
        let cfg = DenoiserTrainConfig {
            model: DenoiserConfig {
                hidden1: 32,
                hidden2: 16,
                ..DenoiserConfig::default()
            },
            epochs: 2,
            batch_size: 16,
            cond_dropout: 1.0,
            loss_ceiling: f32::MAX,
            ..DenoiserTrainConfig::default()
        };
        let model = train_denoiser(&data, &cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = standard_normal_vec(&mut rng, IMG_DIM);
        let toks = Vocab::default()
            .tokenize("a circle on a light background at the center")
            .unwrap();
        let c = model.embed_prompt(&toks).unwrap().with_void_tail(4).unwrap();
        let cond = predict_noise(&model, &z, 400, &c).unwrap();
        let uncond =
            predict_noise(&model, &z, 400, &ConditionEmbedding::null(model.cfg.token_dim))
                .unwrap();
        let diff = (&cond - &uncond).mapv(f32::abs).sum();
        assert_eq!(diff, 0.0, "condition pathway should be exactly inert");
    }

    #[test]
    fn empty_dataset_rejected() {
        let data = Dataset {
            samples: vec![],
            rho: 0.5,
            seed: 0,
        };
        assert!(train_denoiser(&data, &DenoiserTrainConfig::default(), 0).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("den.ckpt");
        let model = tiny_model(7);
        model.save(&path, "hash", 7).unwrap();
        let (loaded, meta) = Denoiser::load(&path).unwrap();
        assert_eq!(meta.seed, 7);
        assert_eq!(loaded.embed, model.embed);
        assert_eq!(loaded.out.w, model.out.w);
    }
}
