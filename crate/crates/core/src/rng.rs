//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 generator keyed by
//! a 64-bit seed. The ChaCha stream id is derived from a purpose label plus an
//! index (layer number, epoch, ...), so each consumer gets its own
//! non-overlapping sequence. ChaCha is counter based and specified bit for bit,
//! which makes every dataset and training run reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable stream id for a `(purpose, index)` pair: FNV-1a over the label,
/// then mixed with the index through splitmix64.
pub fn stream_id(purpose: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h ^ splitmix64(index))
}

/// Generator for `seed` positioned on the stream named by `(purpose, index)`.
pub fn stream(seed: u64, purpose: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(purpose, index));
    rng
}

/// Derive a child seed, used when one seed has to fan out into independent
/// sub-experiments (train split, test split, label noise, ...).
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    splitmix64(seed ^ stream_id(purpose, 0))
}
