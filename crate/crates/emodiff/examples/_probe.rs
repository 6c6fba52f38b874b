use std::path::Path;
use std::time::Instant;

use emodiff::cli::ModelBundle;
use emodiff::condition::{ConditionEmbedding, EmotionalTokens};
use emodiff::diffusion::forward_diffuse;
use emodiff::emotion::{EmotionWheel, ALL_EMOTIONS};
use emodiff::eval::ablate_losses;
use emodiff::glyphs::{encode_image, Dataset, Vocab, IMG_DIM};
use emodiff::models::predict_noise;
use emodiff::synthesis::{token_loss_and_grad, GuidanceConfig};
use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn accept_cfg() -> GuidanceConfig {
    GuidanceConfig {
        n_steps: 20,
        max_inner: 25,
        lr0: 0.02,
        ..GuidanceConfig::default()
    }
}

fn main() -> emodiff::Result<()> {
    let bundle = ModelBundle::load(Path::new("target/models"))?;
    let models = bundle.models();
    let dataset = Dataset::load(Path::new("target/data"))?;
    let vocab = Vocab::default();
    let wheel = EmotionWheel::default();
    let denoiser = models.denoiser;
    let sched = denoiser.schedule();
    let cfg = accept_cfg();

    // ---- c2: vector-norm gradient check over 100 sampled coordinates ----
    let sample = &dataset.samples[17];
    let tokens = vocab.tokenize(&sample.prompt)?;
    let base = denoiser.embed_prompt(&tokens)?;
    let t_train = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let z0img = encode_image(&sample.image);
    let eps: Array1<f32> = Array1::from_shape_fn(IMG_DIM, |_| normal.sample(&mut rng));
    let z_t = forward_diffuse(&z0img, t_train, &eps, &sched)?;
    let null = ConditionEmbedding::null(denoiser.cfg.token_dim);
    let eps_u = predict_noise(denoiser, &z_t, t_train, &null)?;
    let y_target = ALL_EMOTIONS[5];
    let y_inh = Some(ALL_EMOTIONS[1]);
    let y_sim = wheel.similar_emotions(y_target);
    let s0 = EmotionalTokens::init(cfg.k_tokens, denoiser.cfg.token_dim, 0.1, &mut rng);

    let loss_at = |tok| -> emodiff::Result<f32> {
        let s = EmotionalTokens::from_tokens(tok);
        let (terms, _, _) = token_loss_and_grad(
            &s, &z_t, t_train, &base, &eps_u, y_target, y_inh, &y_sim, &models, &sched, &cfg,
        )?;
        Ok(terms.total)
    };
    let (_, _, analytic) = token_loss_and_grad(
        &s0, &z_t, t_train, &base, &eps_u, y_target, y_inh, &y_sim, &models, &sched, &cfg,
    )?;
    for h in [1e-2f32, 3e-2, 1e-1] {
        let mut rng2 = ChaCha8Rng::seed_from_u64(0xC2C2);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for _ in 0..100 {
            let k = rng2.gen_range(0..cfg.k_tokens);
            let d = rng2.gen_range(0..denoiser.cfg.token_dim);
            let mut plus = s0.tokens().clone();
            plus[(k, d)] += h;
            let mut minus = s0.tokens().clone();
            minus[(k, d)] -= h;
            let fd = (loss_at(plus)? - loss_at(minus)?) as f64 / (2.0 * h as f64);
            let an = analytic[(k, d)] as f64;
            num += (fd - an) * (fd - an);
            den += an * an;
        }
        println!(
            "c2 h={h:.0e}: norm ratio ||fd-an||/||an|| = {:.3e}",
            num.sqrt() / den.sqrt()
        );
    }

    // ---- c6: ablation at p30, single optimization at gate opening -------
    for (name, mi, lr0) in [("once mi25", 25usize, 0.02f32), ("once mi50", 50, 0.05)] {
        let c = GuidanceConfig {
            eta: 5.423806,
            reoptimize_each_step: false,
            max_inner: mi,
            lr0,
            ..cfg.clone()
        };
        let t0 = Instant::now();
        let report = ablate_losses(200, &models, &bundle.judges(), &c, 0xC6)?;
        for r in &report.rows {
            println!(
                "c6 eta {name} {}: acc_guide {:.3} acc_agn {:.3} confusion {:.3} capture {:.3}",
                r.combo, r.acc_guide, r.acc_agnostic, r.neighbor_confusion, r.inherent_capture
            );
        }
        println!("c6 eta {name} total {:.1?}", t0.elapsed());
    }
    Ok(())
}
