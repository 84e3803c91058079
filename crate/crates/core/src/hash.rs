//! Fixed 64-bit hashing shared by partitioning, dedup fingerprints and
//! vocabulary checksums.
//!
//! FNV-1a 64 is used everywhere a hash must be stable across platforms and
//! releases; `std`'s `DefaultHasher` makes no such promise.

use std::hash::Hasher;

use fnv::FnvHasher;

/// FNV-1a 64 over raw bytes (offset basis 0xcbf29ce484222325, prime 0x100000001b3).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hasher = FnvHasher::default();
    hasher.write(bytes);
    hasher.finish()
}

/// Lower-case hex rendering used for synthesized ids and checksums.
pub fn hex64(value: u64) -> String {
    format!("{value:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_published_fnv1a_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn hex_is_zero_padded() {
        assert_eq!(hex64(0xab), "00000000000000ab");
    }
}
