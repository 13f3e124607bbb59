//! Seed plumbing. Every random stream in the crate is a ChaCha8 generator
//! keyed by a seed derived from the run seed, a stream tag and an index, so
//! parallel workers draw the same numbers as a sequential loop would.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `(base, stream, index)` into an independent 64-bit seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(base) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ index)
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(base: u64, stream: u64, index: u64) -> Rng {
    rng_from(derive_seed(base, stream, index))
}

/// Draws an index from a discrete distribution given by `probs`.
pub fn sample_index<R: rand::Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
