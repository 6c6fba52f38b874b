//! Contrastive joint image/text embedder.
//!
//! Two small towers map glyph latents and tokenized prompts into a shared
//! L2-normalized space; trained with a symmetric InfoNCE loss at a fixed
//! temperature. Semantic gating in the synthesis loop scores cosine
//! similarity between a rollout's clean image and its prompt here.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EmodiffError, Result};
use crate::glyphs::{encode_image, Dataset, PromptTokens, Vocab, IMG_DIM};
use crate::models::checkpoint::{
    read_checkpoint, take_tensor, write_checkpoint, CheckpointMeta, ScheduleMeta, TensorEntry,
};
use crate::nn::{
    normalize_rows, normalize_rows_backward, silu, silu_grad, softmax_rows, Adam, Linear,
};

/// Softmax temperature shared by training and the semantic gate.
pub const EMBED_TEMPERATURE: f32 = 0.07;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub embed_dim: usize,
    pub img_hidden: usize,
    pub text_token_dim: usize,
    pub text_hidden: usize,
    pub vocab_size: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            img_hidden: 256,
            text_token_dim: 32,
            text_hidden: 64,
            vocab_size: Vocab::default().len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct JointEmbedder {
    pub cfg: EmbedderConfig,
    /// Text token table, vocab x text_token_dim (independent of the
    /// denoiser's prompt table).
    embed: Array2<f32>,
    img1: Linear,
    img2: Linear,
    txt1: Linear,
    txt2: Linear,
}

struct ImgCache {
    x: Array2<f32>,
    h1: Array2<f32>,
    a1: Array2<f32>,
    pre: Array2<f32>,
}

struct TxtCache {
    pooled: Array2<f32>,
    h1: Array2<f32>,
    a1: Array2<f32>,
    pre: Array2<f32>,
}

impl JointEmbedder {
    pub fn new(cfg: EmbedderConfig, rng: &mut ChaCha8Rng) -> Self {
        let embed = crate::nn::he_normal(rng, cfg.vocab_size, cfg.text_token_dim, 0.5);
        Self {
            img1: Linear::new(IMG_DIM, cfg.img_hidden, 1.0, rng),
            img2: Linear::new(cfg.img_hidden, cfg.embed_dim, 1.0, rng),
            txt1: Linear::new(cfg.text_token_dim, cfg.text_hidden, 1.0, rng),
            txt2: Linear::new(cfg.text_hidden, cfg.embed_dim, 1.0, rng),
            embed,
            cfg,
        }
    }

    fn img_forward(&self, x: &Array2<f32>) -> (Array2<f32>, ImgCache) {
        let h1 = self.img1.forward(x);
        let a1 = silu(&h1);
        let pre = self.img2.forward(&a1);
        let out = normalize_rows(&pre);
        (
            out,
            ImgCache {
                x: x.clone(),
                h1,
                a1,
                pre,
            },
        )
    }

    fn pool_tokens(&self, tokens: &PromptTokens) -> Result<Array1<f32>> {
        if tokens.is_empty() {
            return Err(EmodiffError::InvalidArgument(
                "cannot embed an empty prompt".into(),
            ));
        }
        let mut v = Array1::<f32>::zeros(self.cfg.text_token_dim);
        for &id in &tokens.0 {
            if id as usize >= self.cfg.vocab_size {
                return Err(EmodiffError::InvalidArgument(format!(
                    "token id {id} outside vocab"
                )));
            }
            v += &self.embed.row(id as usize);
        }
        Ok(v / tokens.len() as f32)
    }

    fn txt_forward(&self, pooled: &Array2<f32>) -> (Array2<f32>, TxtCache) {
        let h1 = self.txt1.forward(pooled);
        let a1 = silu(&h1);
        let pre = self.txt2.forward(&a1);
        let out = normalize_rows(&pre);
        (
            out,
            TxtCache {
                pooled: pooled.clone(),
                h1,
                a1,
                pre,
            },
        )
    }

    /// Unit-norm embedding of a single latent.
    pub fn embed_image(&self, z: &Array1<f32>) -> Result<Array1<f32>> {
        if z.len() != IMG_DIM {
            return Err(EmodiffError::ShapeMismatch {
                expected: format!("{IMG_DIM}"),
                got: format!("{}", z.len()),
            });
        }
        let x = z.view().insert_axis(Axis(0)).to_owned();
        let (out, _) = self.img_forward(&x);
        Ok(out.index_axis(Axis(0), 0).to_owned())
    }

    /// Unit-norm embedding of a tokenized prompt.
    pub fn embed_text(&self, tokens: &PromptTokens) -> Result<Array1<f32>> {
        let pooled = self.pool_tokens(tokens)?.insert_axis(Axis(0)).to_owned();
        let (out, _) = self.txt_forward(&pooled);
        Ok(out.index_axis(Axis(0), 0).to_owned())
    }

    /// Cosine similarity between a latent and a prompt (both towers emit
    /// unit vectors, so this is a plain dot product).
    pub fn cosine(&self, z: &Array1<f32>, tokens: &PromptTokens) -> Result<f32> {
        let i = self.embed_image(z)?;
        let t = self.embed_text(tokens)?;
        Ok(i.dot(&t))
    }

    pub fn n_params(&self) -> usize {
        self.embed.len()
            + self.img1.n_params()
            + self.img2.n_params()
            + self.txt1.n_params()
            + self.txt2.n_params()
    }

    pub fn save(&self, path: &Path, dataset_hash: &str, seed: u64) -> Result<()> {
        let meta = CheckpointMeta {
            arch_id: "embedder".into(),
            dataset_hash: dataset_hash.into(),
            seed,
            schedule: ScheduleMeta {
                t_max: 1000,
                beta_start: 1e-4,
                beta_end: 0.02,
            },
            config: serde_json::to_value(&self.cfg)?,
        };
        let mut tensors = vec![TensorEntry {
            name: "embed".into(),
            dims: vec![self.embed.nrows(), self.embed.ncols()],
            data: self.embed.iter().copied().collect(),
        }];
        for (name, layer) in [
            ("img1", &self.img1),
            ("img2", &self.img2),
            ("txt1", &self.txt1),
            ("txt2", &self.txt2),
        ] {
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
        if meta.arch_id != "embedder" {
            return Err(EmodiffError::Checkpoint(format!(
                "expected embedder checkpoint, got {}",
                meta.arch_id
            )));
        }
        let cfg: EmbedderConfig = serde_json::from_value(meta.config.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = JointEmbedder::new(cfg.clone(), &mut rng);
        let e = take_tensor(
            &mut tensors,
            "embed",
            &[cfg.vocab_size, cfg.text_token_dim],
        )?;
        model.embed = Array2::from_shape_vec((cfg.vocab_size, cfg.text_token_dim), e)
            .expect("dims checked");
        for (name, layer) in [
            ("img1", &mut model.img1),
            ("img2", &mut model.img2),
            ("txt1", &mut model.txt1),
            ("txt2", &mut model.txt2),
        ] {
            let (rows, cols) = (layer.w.nrows(), layer.w.ncols());
            let w = take_tensor(&mut tensors, &format!("{name}.w"), &[rows, cols])?;
            let b = take_tensor(&mut tensors, &format!("{name}.b"), &[rows])?;
            layer.w = Array2::from_shape_vec((rows, cols), w).expect("dims checked");
            layer.b = Array1::from_vec(b);
        }
        Ok((model, meta))
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedderTrainConfig {
    pub model: EmbedderConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub holdout_frac: f32,
    /// Image-to-text top-1 retrieval rate the run must reach on a held-out
    /// batch of 64.
    pub retrieval_floor: f32,
}

impl Default for EmbedderTrainConfig {
    fn default() -> Self {
        Self {
            model: EmbedderConfig::default(),
            epochs: 25,
            batch_size: 64,
            lr: 1e-3,
            holdout_frac: 0.05,
            retrieval_floor: 0.8,
        }
    }
}

/// Image-to-text top-1 retrieval over up to 64 held-out pairs. Duplicate
/// prompts count as correct matches: retrieving a different sample with the
/// same prompt string is not an error.
pub fn retrieval_rate(
    model: &JointEmbedder,
    samples: &[&crate::glyphs::Sample],
) -> Result<f32> {
    let n = samples.len().min(64);
    if n == 0 {
        return Err(EmodiffError::InvalidArgument("no held-out samples".into()));
    }
    let mut img = Array2::zeros((n, model.cfg.embed_dim));
    let mut txt = Array2::zeros((n, model.cfg.embed_dim));
    for (i, s) in samples.iter().take(n).enumerate() {
        img.row_mut(i)
            .assign(&model.embed_image(&encode_image(&s.image))?);
        txt.row_mut(i).assign(&model.embed_text(&s.tokens)?);
    }
    let sim = img.dot(&txt.t());
    let mut correct = 0usize;
    for i in 0..n {
        let best = sim
            .row(i)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        if samples[best].prompt == samples[i].prompt {
            correct += 1;
        }
    }
    Ok(correct as f32 / n as f32)
}

/// Train the joint embedder with symmetric InfoNCE at the fixed temperature;
/// fails distinctly when held-out retrieval misses the floor.
pub fn train_embedder(
    dataset: &Dataset,
    cfg: &EmbedderTrainConfig,
    seed: u64,
) -> Result<JointEmbedder> {
    if dataset.samples.len() < 2 {
        return Err(EmodiffError::InvalidArgument(
            "need at least 2 samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = JointEmbedder::new(cfg.model.clone(), &mut rng);
    let (train, hold) = dataset.split_holdout(cfg.holdout_frac);
    let n = train.len();
    let mut latents = Array2::zeros((n, IMG_DIM));
    for (i, s) in train.iter().enumerate() {
        latents.row_mut(i).assign(&encode_image(&s.image));
    }
    let mut adam = Adam::default();
    let inv_tau = 1.0 / EMBED_TEMPERATURE;

    for _epoch in 0..cfg.epochs {
        let order = crate::nn::shuffled_indices(n, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            if b < 2 {
                continue;
            }
            let mut x = Array2::zeros((b, IMG_DIM));
            let mut pooled = Array2::zeros((b, model.cfg.text_token_dim));
            for (i, &si) in chunk.iter().enumerate() {
                x.row_mut(i).assign(&latents.row(si));
                pooled.row_mut(i).assign(&model.pool_tokens(&train[si].tokens)?);
            }
            let (iv, icache) = model.img_forward(&x);
            let (tv, tcache) = model.txt_forward(&pooled);

            // Symmetric InfoNCE: matched pairs sit on the diagonal. Rows with
            // duplicate prompts make some "negatives" true matches; the tiny
            // vocabulary tolerates that noise.
            let logits = iv.dot(&tv.t()) * inv_tau;
            let p_rows = softmax_rows(&logits);
            let p_cols = softmax_rows(&logits.t().to_owned());
            let mut dlogits = Array2::<f32>::zeros((b, b));
            for i in 0..b {
                for j in 0..b {
                    let mut g = p_rows[(i, j)] + p_cols[(j, i)];
                    if i == j {
                        g -= 2.0;
                    }
                    dlogits[(i, j)] = g / (2.0 * b as f32);
                }
            }
            let div = &dlogits.dot(&tv) * inv_tau;
            let dtv = &dlogits.t().dot(&iv) * inv_tau;

            // Image tower backward.
            let dpre_i = normalize_rows_backward(&icache.pre, &div);
            let (dw_i2, db_i2, da1_i) = model.img2.backward(&icache.a1, &dpre_i);
            let dh1_i = &da1_i * &silu_grad(&icache.h1);
            let (dw_i1, db_i1, _) = model.img1.backward(&icache.x, &dh1_i);
            // Text tower backward.
            let dpre_t = normalize_rows_backward(&tcache.pre, &dtv);
            let (dw_t2, db_t2, da1_t) = model.txt2.backward(&tcache.a1, &dpre_t);
            let dh1_t = &da1_t * &silu_grad(&tcache.h1);
            let (dw_t1, db_t1, dpooled) = model.txt1.backward(&tcache.pooled, &dh1_t);
            // Token table: each token of sample i receives dpooled_i / len.
            let mut dembed = Array2::<f32>::zeros(model.embed.raw_dim());
            for (i, &si) in chunk.iter().enumerate() {
                let ids = &train[si].tokens.0;
                let scale = 1.0 / ids.len() as f32;
                for &id in ids {
                    let mut row = dembed.row_mut(id as usize);
                    row += &(&dpooled.row(i) * scale);
                }
            }

            adam.begin_step();
            adam.update2("img1.w", &mut model.img1.w, &dw_i1, cfg.lr);
            adam.update1("img1.b", &mut model.img1.b, &db_i1, cfg.lr);
            adam.update2("img2.w", &mut model.img2.w, &dw_i2, cfg.lr);
            adam.update1("img2.b", &mut model.img2.b, &db_i2, cfg.lr);
            adam.update2("txt1.w", &mut model.txt1.w, &dw_t1, cfg.lr);
            adam.update1("txt1.b", &mut model.txt1.b, &db_t1, cfg.lr);
            adam.update2("txt2.w", &mut model.txt2.w, &dw_t2, cfg.lr);
            adam.update1("txt2.b", &mut model.txt2.b, &db_t2, cfg.lr);
            adam.update2("embed", &mut model.embed, &dembed, cfg.lr);
        }
    }

    let rate = retrieval_rate(&model, &hold)?;
    if !rate.is_finite() {
        return Err(EmodiffError::NonFinite("held-out retrieval rate".into()));
    }
    if rate < cfg.retrieval_floor {
        return Err(EmodiffError::TrainingFailure(format!(
            "held-out retrieval rate {rate} below floor {}",
            cfg.retrieval_floor
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyphs::generate_dataset;

    #[test]
    fn embeddings_are_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = JointEmbedder::new(EmbedderConfig::default(), &mut rng);
        let z = crate::nn::standard_normal_vec(&mut rng, IMG_DIM);
        let i = model.embed_image(&z).unwrap();
        assert!((i.dot(&i) - 1.0).abs() < 1e-4);
        let toks = Vocab::default().tokenize("an image of awe").unwrap();
        let t = model.embed_text(&toks).unwrap();
        assert!((t.dot(&t) - 1.0).abs() < 1e-4);
        let cos = model.cosine(&z, &toks).unwrap();
        assert!((-1.0..=1.0).contains(&cos));
    }

    #[test]
    fn empty_prompt_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = JointEmbedder::new(EmbedderConfig::default(), &mut rng);
        assert!(model.embed_text(&PromptTokens(vec![])).is_err());
    }

    #[test]
    fn trains_to_retrieval_floor() {
        let data = generate_dataset(1536, 0.8, 31).unwrap();
        let cfg = EmbedderTrainConfig {
            epochs: 25,
            ..EmbedderTrainConfig::default()
        };
        let model = train_embedder(&data, &cfg, 7).unwrap();
        let (_, hold) = data.split_holdout(0.05);
        assert!(retrieval_rate(&model, &hold).unwrap() >= 0.8);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = generate_dataset(64, 0.8, 2).unwrap();
        let cfg = EmbedderTrainConfig {
            epochs: 1,
            retrieval_floor: 0.0,
            ..EmbedderTrainConfig::default()
        };
        let a = train_embedder(&data, &cfg, 9).unwrap();
        let b = train_embedder(&data, &cfg, 9).unwrap();
        assert_eq!(a.img1.w, b.img1.w);
        assert_eq!(a.embed, b.embed);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = JointEmbedder::new(EmbedderConfig::default(), &mut rng);
        model.save(&path, "hash", 4).unwrap();
        let (loaded, meta) = JointEmbedder::load(&path).unwrap();
        assert_eq!(meta.arch_id, "embedder");
        assert_eq!(loaded.embed, model.embed);
        assert_eq!(loaded.txt2.b, model.txt2.b);
    }
}
