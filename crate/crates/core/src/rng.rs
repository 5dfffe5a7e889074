//! Deterministic seed derivation.
//!
//! Every random draw in the toolkit comes from a ChaCha8 stream keyed by a
//! list of integer parts (base seed, scene id, agent id, epoch, ...). The
//! derivation is a plain SplitMix64 fold, so identical parts give identical
//! streams on every platform and thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into a single 64-bit value.
pub fn mix(parts: &[u64]) -> u64 {
    let mut state = 0x6C07_8965_2E4F_1D4Bu64;
    let mut acc = 0u64;
    for &p in parts {
        state ^= p;
        acc ^= splitmix64(&mut state);
    }
    // One extra round so `mix(&[x])` differs from `x` itself.
    acc ^ splitmix64(&mut state)
}

/// Deterministic ChaCha8 stream keyed by `parts`.
pub fn rng_from(parts: &[u64]) -> ChaCha8Rng {
    let mut state = mix(parts);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
