//! Seed derivation for independent deterministic RNG streams.

/// splitmix64-style mix over the parts; order-sensitive.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        state = state.wrapping_add(p).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        state ^= state >> 31;
    }
    state
}
