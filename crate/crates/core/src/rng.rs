//! Seeded, platform-stable source of standard-normal variates.
//!
//! Bits come from ChaCha8 (a counter-mode stream cipher, so output is
//! identical on every platform and word size) seeded via
//! `SeedableRng::seed_from_u64`. Normals are drawn with the ziggurat sampler
//! of `rand_distr::StandardNormal`. Both are pinned through `Cargo.lock`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Position in the underlying 32-bit word stream.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Fills `out` in index order.
    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = StandardNormal.sample(&mut self.inner);
        }
    }
}
