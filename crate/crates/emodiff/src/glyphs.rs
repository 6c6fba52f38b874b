//! Procedural "emotive glyph" dataset.
//!
//! Each glyph is a 32x32 RGB image whose content (shape, background, grid
//! position) is prompt-describable and whose emotion class is carried by the
//! fill palette. Prompts never mention the emotion, so emotional control has
//! to flow through the conditioning pathway under test. A correlation knob
//! `rho` ties each shape to a canonical emotion with the given probability,
//! creating inherent emotions.

use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::emotion::EmotionLabel;
use crate::error::{EmodiffError, Result};

pub const CHANNELS: usize = 3;
pub const HEIGHT: usize = 32;
pub const WIDTH: usize = 32;
pub const IMG_DIM: usize = CHANNELS * HEIGHT * WIDTH;

/// Closed shape vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Star,
    Cross,
    Diamond,
    Ring,
    Bar,
}

pub const ALL_SHAPES: [Shape; 8] = [
    Shape::Circle,
    Shape::Square,
    Shape::Triangle,
    Shape::Star,
    Shape::Cross,
    Shape::Diamond,
    Shape::Ring,
    Shape::Bar,
];

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Star => "star",
            Shape::Cross => "cross",
            Shape::Diamond => "diamond",
            Shape::Ring => "ring",
            Shape::Bar => "bar",
        }
    }

    /// Canonical shape -> emotion table. Total and fixed across versions.
    pub fn canonical_emotion(self) -> EmotionLabel {
        match self {
            Shape::Circle => EmotionLabel::Contentment,
            Shape::Square => EmotionLabel::Sadness,
            Shape::Triangle => EmotionLabel::Anger,
            Shape::Star => EmotionLabel::Excitement,
            Shape::Cross => EmotionLabel::Fear,
            Shape::Diamond => EmotionLabel::Awe,
            Shape::Ring => EmotionLabel::Amusement,
            Shape::Bar => EmotionLabel::Disgust,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// SHA-256 over the canonical shape->emotion table rows.
pub const CANONICAL_TABLE_CHECKSUM: &str =
    "4f668235dac60175d7285f1b43727dc8beb45f0624d7d9076b85f3f14e955929";

pub fn canonical_table_checksum() -> String {
    let rows = ALL_SHAPES
        .iter()
        .map(|s| format!("{}={}", s.name(), s.canonical_emotion().name()))
        .collect::<Vec<_>>()
        .join(";");
    format!("{:x}", Sha256::digest(rows.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Dark,
    Light,
    Gray,
    Striped,
}

pub const ALL_BACKGROUNDS: [Background; 4] = [
    Background::Dark,
    Background::Light,
    Background::Gray,
    Background::Striped,
];

impl Background {
    pub fn name(self) -> &'static str {
        match self {
            Background::Dark => "dark",
            Background::Light => "light",
            Background::Gray => "gray",
            Background::Striped => "striped",
        }
    }
}

/// Coarse 3x3 grid cell, row-major 0..9.
pub type GridPos = usize;

pub const POSITION_NAMES: [&str; 9] = [
    "top left",
    "top",
    "top right",
    "left",
    "center",
    "right",
    "bottom left",
    "bottom",
    "bottom right",
];

/// Per-emotion fill palette; pairwise well separated so palette-based
/// classification is easy by construction.
pub fn palette(e: EmotionLabel) -> [f32; 3] {
    match e {
        EmotionLabel::Amusement => [1.00, 0.85, 0.10],
        EmotionLabel::Awe => [0.55, 0.15, 0.85],
        EmotionLabel::Contentment => [0.15, 0.80, 0.30],
        EmotionLabel::Excitement => [1.00, 0.45, 0.05],
        EmotionLabel::Anger => [0.90, 0.08, 0.08],
        EmotionLabel::Disgust => [0.50, 0.55, 0.05],
        EmotionLabel::Fear => [0.10, 0.10, 0.55],
        EmotionLabel::Sadness => [0.35, 0.55, 0.75],
    }
}

/// Everything needed to render one glyph; render is a pure function of this.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlyphSpec {
    pub shape: Shape,
    pub background: Background,
    pub position: GridPos,
    pub emotion: EmotionLabel,
    pub jitter_seed: u64,
}

impl GlyphSpec {
    pub fn validate(&self) -> Result<()> {
        if self.position >= 9 {
            return Err(EmodiffError::InvalidArgument(format!(
                "grid position {} out of range",
                self.position
            )));
        }
        Ok(())
    }

    pub fn prompt(&self) -> String {
        format!(
            "a {} on a {} background at the {}",
            self.shape.name(),
            self.background.name(),
            POSITION_NAMES[self.position]
        )
    }
}

fn shape_mask(shape: Shape, dx: f32, dy: f32) -> bool {
    match shape {
        Shape::Circle => dx * dx + dy * dy <= 4.5 * 4.5,
        Shape::Ring => {
            let d2 = dx * dx + dy * dy;
            (2.4 * 2.4..=4.5 * 4.5).contains(&d2)
        }
        Shape::Square => dx.abs() <= 4.0 && dy.abs() <= 4.0,
        Shape::Diamond => dx.abs() + dy.abs() <= 4.6,
        Shape::Triangle => dy >= -4.0 && dy <= 4.5 && dx.abs() <= (dy + 4.0) * 0.55,
        Shape::Cross => {
            (dx.abs() <= 1.6 && dy.abs() <= 4.5) || (dy.abs() <= 1.6 && dx.abs() <= 4.5)
        }
        Shape::Star => {
            let r2 = dx * dx + dy * dy;
            r2 <= 4.8 * 4.8
                && (dx.abs() <= 1.3
                    || dy.abs() <= 1.3
                    || (dx - dy).abs() <= 1.8
                    || (dx + dy).abs() <= 1.8)
        }
        Shape::Bar => dy.abs() <= 1.8 && dx.abs() <= 4.6,
    }
}

/// Render a 32x32 RGB image in [0, 1], channel-first.
pub fn render_glyph(spec: &GlyphSpec) -> Result<Array3<f32>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.jitter_seed);
    let base = palette(spec.emotion);
    let mut color = [0.0f32; 3];
    for (c, b) in color.iter_mut().zip(base.iter()) {
        *c = (b + rng.gen_range(-0.06f32..0.06)).clamp(0.0, 1.0);
    }
    let mut img = Array3::<f32>::zeros((CHANNELS, HEIGHT, WIDTH));
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            let bg = match spec.background {
                Background::Dark => 0.08,
                Background::Light => 0.92,
                Background::Gray => 0.50,
                Background::Striped => {
                    if (y / 4) % 2 == 0 {
                        0.30
                    } else {
                        0.70
                    }
                }
            };
            for c in 0..CHANNELS {
                img[(c, y, x)] = bg;
            }
        }
    }
    // Shape cell: 3x3 grid of 10px cells with a 1px outer margin.
    let row = spec.position / 3;
    let col = spec.position % 3;
    let cy = 1.0 + row as f32 * 10.0 + 5.0;
    let cx = 1.0 + col as f32 * 10.0 + 5.0;
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            let dy = y as f32 + 0.5 - cy;
            let dx = x as f32 + 0.5 - cx;
            if dx.abs() <= 5.0 && dy.abs() <= 5.0 && shape_mask(spec.shape, dx, dy) {
                for c in 0..CHANNELS {
                    img[(c, y, x)] = color[c];
                }
            }
        }
    }
    Ok(img)
}

/// Flatten channel-first image to a latent vector in [-1, 1].
pub fn encode_image(img: &Array3<f32>) -> Array1<f32> {
    Array1::from_iter(img.iter().map(|v| 2.0 * v - 1.0))
}

/// Inverse of [`encode_image`], clamped back into [0, 1].
pub fn decode_latent(z: &Array1<f32>) -> Array3<f32> {
    let mut img = Array3::<f32>::zeros((CHANNELS, HEIGHT, WIDTH));
    for (dst, src) in img.iter_mut().zip(z.iter()) {
        *dst = ((src + 1.0) / 2.0).clamp(0.0, 1.0);
    }
    img
}

pub fn image_to_rgb8(img: &Array3<f32>) -> image::RgbImage {
    image::RgbImage::from_fn(WIDTH as u32, HEIGHT as u32, |x, y| {
        let px = |c: usize| {
            (img[(c, y as usize, x as usize)].clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    })
}

pub fn rgb8_to_image(rgb: &image::RgbImage) -> Result<Array3<f32>> {
    if rgb.width() as usize != WIDTH || rgb.height() as usize != HEIGHT {
        return Err(EmodiffError::ShapeMismatch {
            expected: format!("{WIDTH}x{HEIGHT}"),
            got: format!("{}x{}", rgb.width(), rgb.height()),
        });
    }
    let mut img = Array3::<f32>::zeros((CHANNELS, HEIGHT, WIDTH));
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..CHANNELS {
            img[(c, y as usize, x as usize)] = p.0[c] as f32 / 255.0;
        }
    }
    Ok(img)
}

pub fn save_png(img: &Array3<f32>, path: &Path) -> Result<()> {
    image_to_rgb8(img).save(path)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)?.to_rgb8();
    rgb8_to_image(&img)
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

/// Ordered token ids over the closed prompt vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTokens(pub Vec<u16>);

impl PromptTokens {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Fixed ~40-word vocabulary. Emotion names are present only so the
/// emotion-only generation template can be tokenized; dataset prompts never
/// use them.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<&'static str>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut words: Vec<&'static str> = vec![
            "a", "an", "on", "at", "the", "background", "image", "of",
        ];
        words.extend(ALL_SHAPES.iter().map(|s| s.name()));
        words.extend(ALL_BACKGROUNDS.iter().map(|b| b.name()));
        words.extend(["top", "bottom", "left", "right", "center"]);
        words.extend(crate::emotion::ALL_EMOTIONS.iter().map(|e| e.name()));
        Self { words }
    }
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn tokenize(&self, prompt: &str) -> Result<PromptTokens> {
        let mut ids = Vec::new();
        for word in prompt.split_whitespace() {
            let id = self
                .words
                .iter()
                .position(|w| *w == word)
                .ok_or_else(|| EmodiffError::UnknownWord(word.to_string()))?;
            ids.push(id as u16);
        }
        Ok(PromptTokens(ids))
    }

    pub fn detokenize(&self, tokens: &PromptTokens) -> Result<String> {
        let words: Vec<&str> = tokens
            .0
            .iter()
            .map(|id| {
                self.words
                    .get(*id as usize)
                    .copied()
                    .ok_or_else(|| EmodiffError::InvalidArgument(format!("token id {id}")))
            })
            .collect::<Result<_>>()?;
        Ok(words.join(" "))
    }
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Sample {
    pub spec: GlyphSpec,
    pub image: Array3<f32>,
    pub prompt: String,
    pub tokens: PromptTokens,
    pub emotion: EmotionLabel,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub rho: f32,
    pub seed: u64,
}

/// One line of the on-disk index; the index is the source of truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexRecord {
    pub file: String,
    pub prompt: String,
    pub emotion: String,
    pub shape: Shape,
    pub background: Background,
    pub position: usize,
    pub jitter_seed: u64,
}

fn sample_rng(seed: u64, i: usize) -> ChaCha8Rng {
    // Splitmix-style per-sample stream so parallel generation partitions
    // the seed space deterministically.
    let mixed = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Generate `n` glyphs. With probability `rho` a glyph's emotion is the one
/// canonically tied to its shape; otherwise uniform over the 8 classes.
pub fn generate_dataset(n: usize, rho: f32, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(EmodiffError::InvalidArgument(format!(
            "rho must be in [0, 1], got {rho}"
        )));
    }
    if n < 8 {
        return Err(EmodiffError::InvalidArgument(format!(
            "need at least 8 samples, got {n}"
        )));
    }
    let vocab = Vocab::default();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = sample_rng(seed, i);
        let shape = ALL_SHAPES[rng.gen_range(0..ALL_SHAPES.len())];
        let background = ALL_BACKGROUNDS[rng.gen_range(0..ALL_BACKGROUNDS.len())];
        let position = rng.gen_range(0..9);
        let emotion = if rng.gen::<f32>() < rho {
            shape.canonical_emotion()
        } else {
            crate::emotion::ALL_EMOTIONS[rng.gen_range(0..8)]
        };
        let spec = GlyphSpec {
            shape,
            background,
            position,
            emotion,
            jitter_seed: rng.gen(),
        };
        let image = render_glyph(&spec)?;
        let prompt = spec.prompt();
        let tokens = vocab.tokenize(&prompt)?;
        samples.push(Sample {
            spec,
            image,
            prompt,
            tokens,
            emotion,
        });
    }
    Ok(Dataset { samples, rho, seed })
}

impl Dataset {
    /// Split off the trailing fraction as a holdout.
    pub fn split_holdout(&self, frac: f32) -> (Vec<&Sample>, Vec<&Sample>) {
        let cut = ((1.0 - frac) * self.samples.len() as f32).round() as usize;
        let (train, hold) = self.samples.split_at(cut.min(self.samples.len()));
        (train.iter().collect(), hold.iter().collect())
    }

    pub fn index_records(&self) -> Vec<IndexRecord> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| IndexRecord {
                file: format!("{i:05}.png"),
                prompt: s.prompt.clone(),
                emotion: s.emotion.name().to_string(),
                shape: s.spec.shape,
                background: s.spec.background,
                position: s.spec.position,
                jitter_seed: s.spec.jitter_seed,
            })
            .collect()
    }

    /// Hash of the index text; recorded in checkpoints for provenance.
    pub fn hash(&self) -> Result<String> {
        let mut text = String::new();
        for rec in self.index_records() {
            text.push_str(&serde_json::to_string(&rec)?);
            text.push('\n');
        }
        Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut index = String::new();
        for (rec, sample) in self.index_records().iter().zip(&self.samples) {
            save_png(&sample.image, &dir.join(&rec.file))?;
            index.push_str(&serde_json::to_string(rec)?);
            index.push('\n');
        }
        std::fs::write(dir.join("index.jsonl"), index)?;
        Ok(())
    }

    /// Load a dataset directory; the index file is the source of truth.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let vocab = Vocab::default();
        let text = std::fs::read_to_string(dir.join("index.jsonl"))?;
        let mut samples = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: IndexRecord = serde_json::from_str(line)?;
            let emotion = EmotionLabel::parse(&rec.emotion)?;
            let spec = GlyphSpec {
                shape: rec.shape,
                background: rec.background,
                position: rec.position,
                emotion,
                jitter_seed: rec.jitter_seed,
            };
            let image = load_png(&dir.join(&rec.file))?;
            let tokens = vocab.tokenize(&rec.prompt)?;
            samples.push(Sample {
                spec,
                image,
                prompt: rec.prompt,
                tokens,
                emotion,
            });
        }
        Ok(Dataset {
            samples,
            rho: f32::NAN,
            seed: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic_and_emotion_sensitive() {
        let spec = GlyphSpec {
            shape: Shape::Star,
            background: Background::Dark,
            position: 4,
            emotion: EmotionLabel::Anger,
            jitter_seed: 42,
        };
        let a = render_glyph(&spec).unwrap();
        let b = render_glyph(&spec).unwrap();
        assert_eq!(a, b);
        let mut other = spec;
        other.emotion = EmotionLabel::Fear;
        let c = render_glyph(&other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn canonical_table_is_frozen() {
        assert_eq!(canonical_table_checksum(), CANONICAL_TABLE_CHECKSUM);
    }

    #[test]
    fn tokenizer_roundtrip_and_errors() {
        let v = Vocab::default();
        let toks = v.tokenize("a star on a dark background").unwrap();
        assert_eq!(v.detokenize(&toks).unwrap(), "a star on a dark background");
        assert!(v.tokenize("").unwrap().is_empty());
        match v.tokenize("a zebra") {
            Err(EmodiffError::UnknownWord(w)) => assert_eq!(w, "zebra"),
            other => panic!("expected UnknownWord, got {other:?}"),
        }
    }

    #[test]
    fn all_prompts_tokenize() {
        let v = Vocab::default();
        for &shape in &ALL_SHAPES {
            for &background in &ALL_BACKGROUNDS {
                for position in 0..9 {
                    let spec = GlyphSpec {
                        shape,
                        background,
                        position,
                        emotion: EmotionLabel::Awe,
                        jitter_seed: 0,
                    };
                    let toks = v.tokenize(&spec.prompt()).unwrap();
                    assert_eq!(v.detokenize(&toks).unwrap(), spec.prompt());
                }
            }
        }
    }

    #[test]
    fn dataset_deterministic_per_seed() {
        let a = generate_dataset(16, 0.5, 9).unwrap();
        let b = generate_dataset(16, 0.5, 9).unwrap();
        for (x, y) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(x.spec, y.spec);
            assert_eq!(x.image, y.image);
        }
        let c = generate_dataset(16, 0.5, 10).unwrap();
        assert!(a.samples.iter().zip(c.samples.iter()).any(|(x, y)| x.spec != y.spec));
    }

    #[test]
    fn rho_one_ties_emotion_to_shape() {
        let d = generate_dataset(64, 1.0, 3).unwrap();
        for s in &d.samples {
            assert_eq!(s.emotion, s.spec.shape.canonical_emotion());
        }
    }

    #[test]
    fn rho_zero_shape_emotion_independent() {
        // Chi-square independence test on an 8x8 contingency table.
        let n = 8000;
        let d = generate_dataset(n, 0.0, 11).unwrap();
        let mut table = [[0.0f64; 8]; 8];
        let mut shape_tot = [0.0f64; 8];
        let mut emo_tot = [0.0f64; 8];
        for s in &d.samples {
            let si = ALL_SHAPES.iter().position(|x| *x == s.spec.shape).unwrap();
            let ei = s.emotion.id();
            table[si][ei] += 1.0;
            shape_tot[si] += 1.0;
            emo_tot[ei] += 1.0;
        }
        let mut chi2 = 0.0;
        for si in 0..8 {
            for ei in 0..8 {
                let expected = shape_tot[si] * emo_tot[ei] / n as f64;
                chi2 += (table[si][ei] - expected).powi(2) / expected;
            }
        }
        // 49 dof; p = 0.01 critical value is ~74.9. chi2 below it means the
        // independence hypothesis is not rejected at p > 0.01.
        assert!(chi2 < 74.9, "chi2 = {chi2}");
    }

    #[test]
    fn class_counts_within_ten_percent_at_8000() {
        let d = generate_dataset(8000, 0.8, 5).unwrap();
        let mut counts = [0usize; 8];
        for s in &d.samples {
            counts[s.emotion.id()] += 1;
        }
        for &c in &counts {
            let expected = 1000.0;
            assert!((c as f64 - expected).abs() / expected < 0.10, "count {c}");
        }
    }

    #[test]
    fn rejects_invalid_rho_and_small_n() {
        assert!(generate_dataset(16, 1.5, 0).is_err());
        assert!(generate_dataset(4, 0.5, 0).is_err());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let spec = GlyphSpec {
            shape: Shape::Circle,
            background: Background::Gray,
            position: 0,
            emotion: EmotionLabel::Contentment,
            jitter_seed: 1,
        };
        let img = render_glyph(&spec).unwrap();
        let z = encode_image(&img);
        assert_eq!(z.len(), IMG_DIM);
        let back = decode_latent(&z);
        for (a, b) in back.iter().zip(img.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn dataset_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_dataset(8, 0.5, 21).unwrap();
        d.write(dir.path()).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(loaded.samples.len(), 8);
        for (a, b) in d.samples.iter().zip(loaded.samples.iter()) {
            assert_eq!(a.spec, b.spec);
            assert_eq!(a.prompt, b.prompt);
            // PNG stores 8-bit channels; rendered values survive the quantize.
            for (x, y) in a.image.iter().zip(b.image.iter()) {
                assert!((x - y).abs() < 1.0 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn golden_render_hashes() {
        // Goldens frozen from the first reference render: one canonical spec
        // per emotion, hashed over the 8-bit pixel buffer.
        let golden: [(EmotionLabel, &str); 8] = [
            (EmotionLabel::Amusement, GOLDEN_HASHES[0]),
            (EmotionLabel::Awe, GOLDEN_HASHES[1]),
            (EmotionLabel::Contentment, GOLDEN_HASHES[2]),
            (EmotionLabel::Excitement, GOLDEN_HASHES[3]),
            (EmotionLabel::Anger, GOLDEN_HASHES[4]),
            (EmotionLabel::Disgust, GOLDEN_HASHES[5]),
            (EmotionLabel::Fear, GOLDEN_HASHES[6]),
            (EmotionLabel::Sadness, GOLDEN_HASHES[7]),
        ];
        for (i, (emotion, expect)) in golden.iter().enumerate() {
            let spec = GlyphSpec {
                shape: ALL_SHAPES[i],
                background: Background::Gray,
                position: 4,
                emotion: *emotion,
                jitter_seed: 1000 + i as u64,
            };
            let img = render_glyph(&spec).unwrap();
            let rgb = image_to_rgb8(&img);
            let hash = format!("{:x}", Sha256::digest(rgb.as_raw()));
            assert_eq!(&hash, expect, "golden mismatch for spec {i}");
        }
    }

    include!("../tests/data/golden_hashes.rs");
}
