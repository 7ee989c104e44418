//! Seed-stream derivation.
//!
//! All randomness in the pipeline flows from one 64-bit seed. Named
//! sub-streams are derived by mixing the parent seed with a label and an
//! index through SplitMix64, so the derivation is portable across
//! languages (it depends only on 64-bit integer arithmetic).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One SplitMix64 step (Steele, Lea, Flood 2014).
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed`, a stream label, and an index.
///
/// The label bytes and the index are folded into a SplitMix64 state one
/// word at a time, so distinct (label, index) pairs yield independent
/// streams for every practical purpose.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut state = seed;
    splitmix64(&mut state);
    for chunk in label.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        state ^= u64::from_le_bytes(word);
        splitmix64(&mut state);
    }
    state ^= index;
    splitmix64(&mut state)
}

/// A seeded generator for the sub-stream `(label, index)` of `seed`.
pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label, index))
}
