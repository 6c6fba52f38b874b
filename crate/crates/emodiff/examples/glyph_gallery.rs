//! Render one glyph per emotion, then generate a small correlated dataset
//! and print how strongly shapes follow their canonical emotions.
//!
//! Usage: glyph_gallery [OUT_DIR]  (default: target/glyph_gallery)

use std::collections::HashMap;
use std::path::PathBuf;

use emodiff::emotion::ALL_EMOTIONS;
use emodiff::glyphs::{render_glyph, save_png, Background, GlyphSpec, Shape, ALL_SHAPES};

/// Inverse of the canonical shape -> emotion table.
fn canonical_shape(emotion: emodiff::emotion::EmotionLabel) -> Shape {
    ALL_SHAPES
        .into_iter()
        .find(|s| s.canonical_emotion() == emotion)
        .expect("table is total")
}

fn main() -> emodiff::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/glyph_gallery".into())
        .into();
    std::fs::create_dir_all(&out)?;

    for (i, &emotion) in ALL_EMOTIONS.iter().enumerate() {
        let spec = GlyphSpec {
            shape: canonical_shape(emotion),
            background: Background::Gray,
            position: 4,
            emotion,
            jitter_seed: i as u64,
        };
        let path = out.join(format!("{}.png", emotion.name()));
        save_png(&render_glyph(&spec)?, &path)?;
        println!("{:<12} -> {:?} at {}", emotion.name(), spec.shape, path.display());
    }

    let dataset = emodiff::glyphs::generate_dataset(512, 0.8, 0)?;
    let mut canonical = 0usize;
    let mut per_emotion: HashMap<&str, usize> = HashMap::new();
    for s in &dataset.samples {
        if s.spec.shape == canonical_shape(s.spec.emotion) {
            canonical += 1;
        }
        *per_emotion.entry(s.spec.emotion.name()).or_default() += 1;
    }
    println!(
        "\n512 samples at rho=0.8: {:.1}% canonical shapes (expected ~82.5%)",
        100.0 * canonical as f32 / 512.0
    );
    let mut counts: Vec<_> = per_emotion.into_iter().collect();
    counts.sort();
    for (name, n) in counts {
        println!("  {name:<12} {n}");
    }
    println!("dataset hash: {}", dataset.hash()?);
    Ok(())
}
