//! Seed splitting.
//!
//! Every random draw in the crate comes from one root seed. Each consumer asks
//! for a generator tagged with a [`Purpose`] and an index; the pair selects a
//! ChaCha stream, so classifier training can never shift the synthesizer's
//! draws or the sampler's noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init = 1,
    Data = 2,
    Eps = 3,
    Vocoder = 4,
    Corpus = 5,
}

/// Root seed from which all purpose-specific generators derive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn rng(&self, purpose: Purpose, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(((purpose as u64) << 48) ^ index);
        rng
    }
}
