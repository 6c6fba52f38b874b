//! Eight-class emotion taxonomy, polarity, and wheel adjacency.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EmodiffError, Result};

/// The eight wheel emotions: four positive, four negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Amusement,
    Awe,
    Contentment,
    Excitement,
    Anger,
    Disgust,
    Fear,
    Sadness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

pub const N_EMOTIONS: usize = 8;

pub const ALL_EMOTIONS: [EmotionLabel; N_EMOTIONS] = [
    EmotionLabel::Amusement,
    EmotionLabel::Awe,
    EmotionLabel::Contentment,
    EmotionLabel::Excitement,
    EmotionLabel::Anger,
    EmotionLabel::Disgust,
    EmotionLabel::Fear,
    EmotionLabel::Sadness,
];

impl EmotionLabel {
    pub fn id(self) -> usize {
        match self {
            EmotionLabel::Amusement => 0,
            EmotionLabel::Awe => 1,
            EmotionLabel::Contentment => 2,
            EmotionLabel::Excitement => 3,
            EmotionLabel::Anger => 4,
            EmotionLabel::Disgust => 5,
            EmotionLabel::Fear => 6,
            EmotionLabel::Sadness => 7,
        }
    }

    pub fn from_id(id: usize) -> Result<Self> {
        ALL_EMOTIONS
            .get(id)
            .copied()
            .ok_or_else(|| EmodiffError::InvalidArgument(format!("emotion id {id} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Amusement => "amusement",
            EmotionLabel::Awe => "awe",
            EmotionLabel::Contentment => "contentment",
            EmotionLabel::Excitement => "excitement",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Sadness => "sadness",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        ALL_EMOTIONS
            .iter()
            .copied()
            .find(|e| e.name() == name)
            .ok_or_else(|| EmodiffError::InvalidArgument(format!("unknown emotion {name:?}")))
    }

    pub fn polarity(self) -> Polarity {
        match self {
            EmotionLabel::Amusement
            | EmotionLabel::Awe
            | EmotionLabel::Contentment
            | EmotionLabel::Excitement => Polarity::Positive,
            _ => Polarity::Negative,
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cyclic ordering of the eight labels; adjacency = wheel neighbors.
///
/// The complete default ordering is a repo decision (only the
/// disgust-sadness adjacency is pinned); it is checksummed so accidental
/// reorderings are caught.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmotionWheel {
    order: [EmotionLabel; 8],
}

/// SHA-256 of the shipped default cycle, comma-joined.
pub const DEFAULT_WHEEL_CHECKSUM: &str =
    "fe341173860215a86e34e7c960458d4ed36922a7770d270b722b2d49a2ea1259";

impl Default for EmotionWheel {
    fn default() -> Self {
        // Positive arc then negative arc; places disgust next to sadness.
        Self {
            order: [
                EmotionLabel::Amusement,
                EmotionLabel::Excitement,
                EmotionLabel::Awe,
                EmotionLabel::Contentment,
                EmotionLabel::Sadness,
                EmotionLabel::Disgust,
                EmotionLabel::Fear,
                EmotionLabel::Anger,
            ],
        }
    }
}

impl EmotionWheel {
    /// Validate an explicit cyclic order: all eight labels exactly once.
    pub fn new(order: [EmotionLabel; 8]) -> Result<Self> {
        let mut seen = [false; 8];
        for e in &order {
            if seen[e.id()] {
                return Err(EmodiffError::InvalidWheel(format!(
                    "label {e} appears more than once"
                )));
            }
            seen[e.id()] = true;
        }
        Ok(Self { order })
    }

    /// Load a wheel from a text file: one emotion name per line, cyclic order.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let labels: Vec<EmotionLabel> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(EmotionLabel::parse)
            .collect::<Result<_>>()?;
        let arr: [EmotionLabel; 8] = labels.try_into().map_err(|v: Vec<_>| {
            EmodiffError::InvalidWheel(format!("expected 8 labels, got {}", v.len()))
        })?;
        Self::new(arr)
    }

    pub fn order(&self) -> &[EmotionLabel; 8] {
        &self.order
    }

    pub fn checksum(&self) -> String {
        let joined = self
            .order
            .iter()
            .map(|e| e.name())
            .collect::<Vec<_>>()
            .join(",");
        format!("{:x}", Sha256::digest(joined.as_bytes()))
    }

    /// Wheel neighbors of `target`; never contains `target` itself.
    pub fn similar_emotions(&self, target: EmotionLabel) -> Vec<EmotionLabel> {
        let pos = self
            .order
            .iter()
            .position(|e| *e == target)
            .expect("wheel is total over labels");
        let prev = self.order[(pos + 7) % 8];
        let next = self.order[(pos + 1) % 8];
        vec![prev, next]
    }
}
