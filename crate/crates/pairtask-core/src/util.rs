//! Small shared helpers.

/// FNV-1a over bytes. Used where a hash must be stable across runs,
/// platforms, and compiler versions (token bucketing, sampler lanes) —
/// `std`'s hashers give no such guarantee.
pub(crate) fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// One round of splitmix64; bijective on u64 with strong avalanche.
pub(crate) fn splitmix_64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix independent key words into one 64-bit seed.
pub(crate) fn mix_seed(words: &[u64]) -> u64 {
    let mut state = 0x51_7c_c1_b7_27_22_0a_95;
    for &w in words {
        state = splitmix_64(state ^ w);
    }
    state
}
