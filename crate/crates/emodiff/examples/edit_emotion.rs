//! Edit a rendered glyph toward a different emotion: DDIM-invert the source
//! under its prompt, then resample with the gate and token optimization
//! active. Also shows the eta=+inf case collapsing to plain reconstruction.
//!
//! Usage: edit_emotion [MODELS_DIR] [OUT_DIR]

use std::path::PathBuf;

use emodiff::cli::ModelBundle;
use emodiff::emotion::EmotionLabel;
use emodiff::glyphs::{encode_image, render_glyph, save_png, Background, GlyphSpec, Shape};
use emodiff::synthesis::{edit, GuidanceConfig};

fn main() -> emodiff::Result<()> {
    let mut args = std::env::args().skip(1);
    let models_dir: PathBuf = args.next().unwrap_or_else(|| "target/models".into()).into();
    let out: PathBuf = args.next().unwrap_or_else(|| "target/edit".into()).into();
    std::fs::create_dir_all(&out)?;

    let bundle = ModelBundle::load(&models_dir)?;
    let models = bundle.models();

    // A contentment-colored circle, to be pushed toward fear.
    let spec = GlyphSpec {
        shape: Shape::Circle,
        background: Background::Gray,
        position: 4,
        emotion: EmotionLabel::Contentment,
        jitter_seed: 5,
    };
    let source = render_glyph(&spec)?;
    let prompt = spec.prompt();
    save_png(&source, &out.join("source.png"))?;

    // eta = +inf: invert-then-sample with the gate shut reconstructs.
    let closed = GuidanceConfig { eta: f32::INFINITY, ..Default::default() };
    let (recon, _) = edit(&source, &prompt, EmotionLabel::Fear, &models, &closed, 0)?;
    let mse = (&encode_image(&recon) - &encode_image(&source))
        .mapv(|v| v * v)
        .mean()
        .unwrap();
    println!("reconstruction MSE at eta=+inf: {mse:.4}");
    save_png(&recon, &out.join("reconstruction.png"))?;

    let open = GuidanceConfig { eta: f32::NEG_INFINITY, ..Default::default() };
    let (edited, trace) = edit(&source, &prompt, EmotionLabel::Fear, &models, &open, 0)?;
    let before = bundle.agnostic.predict(&encode_image(&source))?;
    let after = bundle.agnostic.predict(&encode_image(&edited))?;
    println!(
        "edit toward fear: {} -> {} (y_inh = {:?})",
        before.name(),
        after.name(),
        trace.y_inh
    );
    save_png(&edited, &out.join("edited.png"))?;
    println!("artifacts in {}", out.display());
    Ok(())
}
