//! Deterministic, network-free stand-in for a language model.

use sha2::{Digest, Sha256};

pub const STUB_SALT: &[u8] = b"textrec-stub-v1\0";

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `dim` values uniform in `[-1, 1)` from SplitMix64 seeded with the first
/// eight bytes (little-endian) of `SHA-256(STUB_SALT || text)`.
pub fn stub_vector(text: &str, dim: usize) -> Vec<f32> {
    let mut h = Sha256::new();
    h.update(STUB_SALT);
    h.update(text.as_bytes());
    let digest = h.finalize();
    let mut state = u64::from_le_bytes(digest[..8].try_into().unwrap());
    (0..dim)
        .map(|_| {
            let top = (splitmix64(&mut state) >> 40) as f64;
            (top / (1u64 << 24) as f64 * 2.0 - 1.0) as f32
        })
        .collect()
}
