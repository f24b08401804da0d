//! Functional seed derivation. Every random stream in the crate is keyed by
//! (base seed, stream tag, index) through a splitmix64 mix, so dataset
//! generation, batch shuffling, dropout masks, and initialization are
//! reproducible regardless of evaluation order and safe to partition across
//! traces.

/// Stream tags keep unrelated consumers of one base seed statistically
/// disjoint. Values are arbitrary but frozen.
pub mod stream {
    pub const TRAIN_X: u64 = 0x01;
    pub const TRAIN_Y: u64 = 0x02;
    pub const TEST_X: u64 = 0x03;
    pub const SHUFFLE: u64 = 0x04;
    pub const INIT: u64 = 0x05;
    pub const DROPOUT: u64 = 0x06;
    pub const EPOCH: u64 = 0x07;
    pub const NOISE: u64 = 0x08;
}

/// One splitmix64 step: advance by the golden-ratio increment, then finalize.
/// Matches the published reference constants.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed for (base, tag). Chaining calls derives deeper streams.
pub fn derive(base: u64, tag: u64) -> u64 {
    splitmix64(base ^ splitmix64(tag))
}

/// Seed for element `index` of stream `tag` under `base`.
pub fn derive_indexed(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(derive(base, tag) ^ index)
}
