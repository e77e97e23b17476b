//! Splittable random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream derived
//! from `(seed, domain, index)`, so that work can be generated in any order,
//! on any number of threads, and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Disjoint stream families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    Prior = 1,
    Suite = 2,
    Init = 3,
    Grid = 4,
    Oracle = 5,
    Bootstrap = 6,
    Heldout = 7,
    Eval = 8,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 56) ^ (index & 0x00ff_ffff_ffff_ffff));
    rng
}

/// Child stream of an existing generator; consumes one `u64` from the parent.
pub fn fork(parent: &mut Rng, index: u64) -> Rng {
    use rand::RngCore;
    let seed = parent.next_u64();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
