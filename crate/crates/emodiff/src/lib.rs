//! Test-time emotional guidance for a toy diffusion image synthesizer.
//!
//! The crate trains small models on a procedural glyph dataset, then steers
//! a conditional denoiser toward a target emotion at sampling time: a
//! semantic gate watches prompt fidelity, and once it opens, a block of
//! learnable emotional tokens is optimized against a classifier-based
//! multi-emotion loss. Everything is seed-deterministic and CPU-sized.
//!
//! See the `examples/` directory for one runnable walkthrough per major
//! capability.

pub mod baselines;
pub mod cli;
pub mod condition;
pub mod config;
pub mod diffusion;
pub mod emotion;
pub mod error;
pub mod eval;
pub mod glyphs;
pub mod models;
pub mod nn;
pub mod plot;
pub mod synthesis;

pub use error::{EmodiffError, Result};
