//! Two-stage multimodal aspect-based sentiment analysis.
//!
//! Stage one tags aspect terms in the text ([`mate`]); stage two classifies
//! the polarity of each extracted aspect from the sentence and the image,
//! aligning vision to text through a learned translation module ([`masc`]).
//! [`harness`] holds the training loops, checkpoints, prediction, evaluation
//! and ablation runner.

pub mod autograd;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod masc;
pub mod mate;
pub mod metrics;
pub mod nn;
pub mod supervision;
pub mod token_align;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for a (seed, purpose) pair.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
