//! Seedable, splittable random streams.
//!
//! Every stochastic operation in the crate takes an explicit [`RngStream`].
//! Child streams are derived deterministically so experiments are
//! bit-reproducible from a single `u64` seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RngStream(ChaCha8Rng);

impl RngStream {
    pub fn from_seed(seed: u64) -> Self {
        RngStream(ChaCha8Rng::seed_from_u64(seed))
    }

    /// A stream keyed by `(seed, tag)`. Distinct tags give independent streams.
    pub fn derive(seed: u64, tag: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(tag);
        RngStream(rng)
    }

    /// Splits off an independent child stream, advancing `self`.
    pub fn split(&mut self) -> Self {
        let mut seed = [0u8; 32];
        self.0.fill_bytes(&mut seed);
        RngStream(ChaCha8Rng::from_seed(seed))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
