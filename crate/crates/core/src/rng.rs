//! Seed derivation and stream construction.
//!
//! A single master seed fans out into independent, reproducible streams.
//! Every randomized operation takes a plain `u64` seed and builds its own
//! generator, so results depend only on explicit arguments.
//!
//! Derivation scheme: the purpose string is absorbed byte-by-byte into a
//! splitmix64 state seeded by the master seed, then each index is absorbed
//! as a further mixing round. Distinct (purpose, indices) pairs yield
//! decorrelated seeds; the same pair always yields the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One splitmix64 step: advance the state and return a mixed output.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a stream seed from the master seed, a purpose label, and indices.
pub fn derive_seed(master: u64, purpose: &str, indices: &[u64]) -> u64 {
    let mut state = master ^ 0x46_4f_52_47_45_46_4c_00; // domain separation tag
    let mut acc = splitmix64(&mut state);
    for &b in purpose.as_bytes() {
        state ^= u64::from(b);
        acc ^= splitmix64(&mut state);
    }
    for &ix in indices {
        state ^= ix;
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// Construct the deterministic generator used throughout the crate.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
