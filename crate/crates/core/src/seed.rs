//! Seed derivation. Every random stream in the pipeline is keyed off the
//! global seed through these mixers, so results do not depend on the order
//! in which parallel work is scheduled.

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `parent` and a stream key.
#[inline]
pub fn derive(parent: u64, key: u64) -> u64 {
    splitmix64(parent ^ splitmix64(key))
}
