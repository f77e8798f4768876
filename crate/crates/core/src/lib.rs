//! Desk-scale speech recognition lab.
//!
//! Synthesizes toy audio for a configurable word vocabulary, corrupts it with
//! reverberation, background noise, and feature-domain masking, extracts
//! stacked log-Mel features, and trains a small RNN-T recognizer with a
//! multi-stage continual-learning recipe (weighted real/synthetic sampling,
//! encoder freezing, elastic parameter penalty). Everything is seeded and
//! bit-reproducible.

pub mod audio;
pub mod augment;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod loss;
pub mod model;
pub mod params;
pub mod rng;
pub mod synth;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
