//! Source-filter emotional voice conversion (SFEVC).
//!
//! A desk-scale, fully testable voice-conversion system that separates speech
//! into content, rhythm, pitch and timbre streams, squeezes each through an
//! information bottleneck, and re-synthesizes mel-spectrograms with the
//! speaker-independent emotion factors swapped out. Training and inference are
//! staged along the valence-arousal plane: four direction filters (arousal
//! up/down, valence up/down) are fine-tuned from a jointly trained model and
//! chained at conversion time.
//!
//! The crate is self-contained: it ships a parametric source-filter speech
//! generator with ground-truth factor labels, so every claim about
//! disentanglement is checked against a corpus where the answer is known.
//!
//! Layout:
//! - [`signal`]: WAV I/O, STFT, mel, mel-cepstra, F0, pitch normalization, Griffin-Lim
//! - [`resample`]: random-resampling bottleneck and deterministic time scaling
//! - [`neural`]: tape-based reverse-mode autodiff, layers, Adam
//! - [`model`]: the seven encoders, the decoder, and the conversion composition
//! - [`synthcorpus`]: synthetic parallel corpus with controllable factors
//! - [`training`]: losses, pairing regimes, joint + direction-filter stages
//! - [`eval`]: MCD, F0-RMSE, factor recovery, exact t-SNE
//! - [`cli`]: the `sfevc` command set and experiment config

mod binio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod featcache;
pub mod mat;
pub mod model;
pub mod neural;
pub mod resample;
pub mod rng;
pub mod signal;
pub mod synthcorpus;
#[cfg(test)]
mod testutil;
pub mod training;

pub use error::{Error, Result};
