//! Counter-based pseudorandom functions.
//!
//! Everything here is a pure function of its integer inputs so that the
//! synthetic logit model and drift injection reproduce bit for bit on any
//! machine. The mixer is the SplitMix64 finalizer:
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//! z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//! z =  z ^ (z >> 31)
//! ```
//!
//! with all arithmetic wrapping modulo 2^64. Inputs are combined by adding
//! multiples of the golden-ratio increment `0x9e3779b97f4a7c15` before mixing.

pub const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `mix64(seed ^ mix64(index * GOLDEN + GOLDEN))`
pub fn prf2(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_mul(GOLDEN).wrapping_add(GOLDEN)))
}

/// `mix64(mix64(seed ^ mix64(context + GOLDEN)) + index * GOLDEN)`
pub fn prf3(seed: u64, context: u64, index: u64) -> u64 {
    prf3_keyed(prf3_key(seed, context), index)
}

/// The `(seed, context)` half of [`prf3`], for sweeping many indices.
pub fn prf3_key(seed: u64, context: u64) -> u64 {
    mix64(seed ^ mix64(context.wrapping_add(GOLDEN)))
}

pub fn prf3_keyed(key: u64, index: u64) -> u64 {
    mix64(key.wrapping_add(index.wrapping_mul(GOLDEN)))
}

/// Top 53 bits as a double in `[0, 1)`.
pub fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// 64-bit FNV-1a over little-endian token ids.
pub fn fnv1a_tokens(tokens: &[u32]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for t in tokens {
        for b in t.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // SplitMix64 seeded with 0 yields mix64(GOLDEN), mix64(2*GOLDEN), ...
        assert_eq!(mix64(GOLDEN), 0xe220_a839_7b1d_cdaf);
        assert_eq!(mix64(GOLDEN.wrapping_mul(2)), 0x6e78_9e6a_a1b9_65f4);
    }

    #[test]
    fn fnv_empty_is_offset_basis() {
        assert_eq!(fnv1a_tokens(&[]), 0xcbf2_9ce4_8422_2325);
        // FNV-1a of the single byte 'a' followed by three zero bytes
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in [b'a', 0, 0, 0] {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        assert_eq!(fnv1a_tokens(&[b'a' as u32]), h);
    }

    #[test]
    fn unit_range() {
        assert_eq!(unit_f64(0), 0.0);
        assert!(unit_f64(u64::MAX) < 1.0);
    }
}
