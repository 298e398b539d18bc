//! Seeded random streams, one per (seed, purpose, index).
//!
//! Separate streams mean that, say, extra acquisition restarts never shift the
//! privacy noise that a run draws.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    ProblemData,
    Init,
    Acquisition,
    Evaluation,
    PrivacyNoise,
    Baseline,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::ProblemData => 1,
            Stream::Init => 2,
            Stream::Acquisition => 3,
            Stream::Evaluation => 4,
            Stream::PrivacyNoise => 5,
            Stream::Baseline => 6,
        }
    }
}

/// Generator for `purpose` at `index` (usually the iteration) under `seed`.
pub fn stream_rng(seed: u64, purpose: Stream, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((purpose.id() << 48) ^ index);
    rng
}
