//! Train the full toy stack — conditional denoiser, guide and agnostic
//! classifiers, joint embedder — on a generated glyph dataset and save
//! checkpoints in the layout the CLI and other examples expect.
//!
//! Usage: train_stack [DATA_DIR] [MODELS_DIR] [N_SAMPLES]
//! Defaults: target/data target/models 4096. Reuses the dataset if DATA_DIR
//! already exists. Takes several minutes on one core.

use std::path::PathBuf;
use std::time::Instant;

use emodiff::cli::{AGNOSTIC_CKPT, DENOISER_CKPT, EMBEDDER_CKPT, GUIDE_CKPT};
use emodiff::glyphs::{generate_dataset, Dataset};
use emodiff::models::{
    train_classifier, train_denoiser, train_embedder, ClassifierArch, ClassifierTrainConfig,
    DenoiserTrainConfig, EmbedderTrainConfig, SubsetSpec,
};

fn main() -> emodiff::Result<()> {
    let mut args = std::env::args().skip(1);
    let data_dir: PathBuf = args.next().unwrap_or_else(|| "target/data".into()).into();
    let models_dir: PathBuf = args.next().unwrap_or_else(|| "target/models".into()).into();
    let n: usize = args.next().map(|s| s.parse().expect("N_SAMPLES")).unwrap_or(4096);

    let dataset = if data_dir.join("index.jsonl").exists() {
        println!("loading dataset from {}", data_dir.display());
        Dataset::load(&data_dir)?
    } else {
        println!("generating {n} samples at rho=0.8 into {}", data_dir.display());
        let d = generate_dataset(n, 0.8, 0)?;
        d.write(&data_dir)?;
        d
    };
    let hash = dataset.hash()?;
    println!("dataset hash: {hash}");
    std::fs::create_dir_all(&models_dir)?;

    let t = Instant::now();
    let denoiser = train_denoiser(&dataset, &DenoiserTrainConfig::default(), 1)?;
    denoiser.save(&models_dir.join(DENOISER_CKPT), &hash, 1)?;
    println!("denoiser trained in {:.1?}", t.elapsed());

    // The two classifiers train on disjoint halves, keeping the guide and
    // the held-out judge methodologically separate.
    let t = Instant::now();
    let guide = train_classifier(
        &dataset,
        &ClassifierTrainConfig {
            arch: ClassifierArch::Guide,
            subset: SubsetSpec::FirstHalf,
            ..Default::default()
        },
        2,
    )?;
    guide.save(&models_dir.join(GUIDE_CKPT), &hash, 2)?;
    println!("guide classifier trained in {:.1?}", t.elapsed());

    let t = Instant::now();
    let agnostic = train_classifier(
        &dataset,
        &ClassifierTrainConfig {
            arch: ClassifierArch::Agnostic,
            subset: SubsetSpec::SecondHalf,
            ..Default::default()
        },
        3,
    )?;
    agnostic.save(&models_dir.join(AGNOSTIC_CKPT), &hash, 3)?;
    println!("agnostic classifier trained in {:.1?}", t.elapsed());

    let t = Instant::now();
    let embedder = train_embedder(&dataset, &EmbedderTrainConfig::default(), 4)?;
    embedder.save(&models_dir.join(EMBEDDER_CKPT), &hash, 4)?;
    println!("embedder trained in {:.1?}", t.elapsed());

    println!("checkpoints written to {}", models_dir.display());
    Ok(())
}
