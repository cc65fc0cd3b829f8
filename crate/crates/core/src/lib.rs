//! Formant tracking toolkit.
//!
//! The crate covers the full pipeline for estimating the first three vocal
//! tract resonances (F1, F2, F3) of a speech signal:
//!
//! - [`dsp`] — acoustic front-end: pre-emphasis, Hamming framing and a
//!   350-dimensional per-frame feature vector (a stack of LPC cepstra for
//!   orders 8 through 17 plus a 50-dimensional real-cepstrum complement),
//!   with per-dimension normalization.
//! - [`baseline`] — a classical tracker that picks formants from the roots
//!   of the LPC polynomial, used both as a comparison point and as a sanity
//!   oracle for the synthetic corpus.
//! - [`nn`] — a small tensor/layer engine with hand-written backward passes
//!   for exactly the operators the tracking network needs, each verifiable
//!   against central finite differences.
//! - [`model`] — the network itself: nine non-causal dilated 1-D
//!   convolutions (dilations 1,2,4 repeated three times, 64 filters of
//!   width 3), densely connected so every block sees the outputs of all
//!   earlier blocks, each block gated by a sigmoid linear unit, with three
//!   parallel fully connected heads predicting F1, F2 and F3 per frame.
//! - [`train`] — Adam optimization over padded, masked utterance batches
//!   with best-validation checkpoint selection.
//! - [`eval`] — mean absolute error and mean absolute percent error over
//!   speech frames, broken down by broad phone class and by
//!   consonant/vowel transition regions.
//! - [`synth`] — a cascade-resonator synthesizer that generates audio with
//!   exactly known formant trajectories, providing ground-truthed
//!   train/validation/test corpora.
//! - [`io`] — WAV, CSV, manifest and binary cache formats shared by the
//!   command line tools.
//!
//! Everything is deterministic given a seed: corpus generation, weight
//! initialization, batch shuffling and dropout all draw from labeled
//! streams derived from one root seed.

pub mod baseline;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod nn;
pub mod synth;
pub mod track;
pub mod train;
pub mod util;

mod book;

pub use error::{Error, Result};
