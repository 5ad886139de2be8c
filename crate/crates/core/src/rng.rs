//! Named, seed-derived random streams.
//!
//! Each consumer (parameter init, task data, stability noise, distillation
//! order, evaluation probes) draws from its own stream so that adding or
//! removing one consumer never shifts the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic 64-bit key for `(seed, label, index)`.
pub fn derive_key(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = splitmix(seed);
    for chunk in label.as_bytes().chunks(8) {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        h = splitmix(h ^ u64::from_le_bytes(buf));
    }
    splitmix(h ^ splitmix(index.wrapping_add(label.len() as u64)))
}

pub fn stream(seed: u64, label: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, label, 0))
}

pub fn indexed_stream(seed: u64, label: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, label, index))
}
