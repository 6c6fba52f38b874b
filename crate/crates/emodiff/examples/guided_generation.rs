//! Generate the same prompt and seed three ways — unguided, gate always
//! open, gate closed — classify the results, and plot the per-emotion
//! probability trajectory of the guided run.
//!
//! Usage: guided_generation [MODELS_DIR] [OUT_DIR]
//! Expects checkpoints from the train_stack example.

use std::path::PathBuf;
use std::time::Instant;

use emodiff::baselines::generate_vanilla;
use emodiff::cli::ModelBundle;
use emodiff::emotion::EmotionLabel;
use emodiff::glyphs::{encode_image, save_png};
use emodiff::synthesis::{generate, GuidanceConfig};

fn main() -> emodiff::Result<()> {
    let mut args = std::env::args().skip(1);
    let models_dir: PathBuf = args.next().unwrap_or_else(|| "target/models".into()).into();
    let out: PathBuf = args.next().unwrap_or_else(|| "target/guided".into()).into();
    std::fs::create_dir_all(&out)?;

    let bundle = ModelBundle::load(&models_dir)?;
    let models = bundle.models();
    let prompt = "a circle on a gray background at the center";
    let target = EmotionLabel::Fear;
    let seed = 11;

    let cfg_open = GuidanceConfig { eta: f32::NEG_INFINITY, ..Default::default() };
    let cfg_closed = GuidanceConfig { eta: f32::INFINITY, ..Default::default() };

    let t = Instant::now();
    let vanilla = generate_vanilla(prompt, &bundle.denoiser, &cfg_open, seed)?;
    println!("vanilla run: {:.2?}", t.elapsed());

    let t = Instant::now();
    let (guided, trace) = generate(Some(prompt), target, &models, &cfg_open, seed)?;
    println!(
        "guided run:  {:.2?} ({} steps, y_inh = {:?})",
        t.elapsed(),
        trace.steps.len(),
        trace.y_inh
    );

    let (closed, _) = generate(Some(prompt), target, &models, &cfg_closed, seed)?;
    assert_eq!(closed, vanilla, "gate closed must equal vanilla bit for bit");
    println!("gate-closed output is bit-identical to vanilla");

    for (name, img) in [("vanilla", &vanilla), ("guided", &guided)] {
        let label = bundle.agnostic.predict(&encode_image(img))?;
        println!("{name:<8} classified as {}", label.name());
        save_png(img, &out.join(format!("{name}.png")))?;
    }
    trace.write_jsonl(&out.join("trace.jsonl"))?;
    emodiff::plot::plot_trace_probs(&trace, &out.join("trace_probs.png"))?;
    println!("artifacts in {}", out.display());
    Ok(())
}
