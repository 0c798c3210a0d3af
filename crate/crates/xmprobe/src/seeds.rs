//! Deterministic seed derivation for independent random streams.

/// SplitMix64 finalizer. Stable across platforms and builds.
pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed, a salt naming the
/// consumer, and an index within that consumer.
pub(crate) fn mix(seed: u64, salt: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ salt) ^ index)
}

pub(crate) const SALT_SPLIT_FOLD: u64 = 0x5350_4c49;
pub(crate) const SALT_CONTROL_PERM: u64 = 0x4354_524c;
pub(crate) const SALT_CONTROL_APPLY: u64 = 0x4354_4150;
pub(crate) const SALT_SYNTH_MAPS: u64 = 0x4d41_5053;
pub(crate) const SALT_SYNTH_CATEGORY: u64 = 0x4341_5447;
pub(crate) const SALT_SYNTH_RECORD: u64 = 0x5245_4344;
pub(crate) const SALT_TRAIN: u64 = 0x5452_4e49;
pub(crate) const SALT_EXP_TRAIN: u64 = 0x4558_5452;
pub(crate) const SALT_BASELINE_MC: u64 = 0x4d43_4253;
pub(crate) const SALT_HUMAN_EVAL: u64 = 0x4855_4d45;
